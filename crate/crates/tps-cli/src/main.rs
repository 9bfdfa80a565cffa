//! Command-line interface for the person-search pipeline: corpus
//! generation, phrase parsing, MID and prompt generation, training,
//! retrieval evaluation and cross-run reports.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use tps_core::corpus::{generate_dataset, load_dataset, write_dataset};
use tps_core::dapgen::generate_prompts;
use tps_core::encoders::Tokenizer;
use tps_core::eval::evaluate;
use tps_core::midgen::{enumerate_mids, sample_mids, MidMode};
use tps_core::textparse::{parse_description, Lexicon};
use tps_core::trainer::{
    self, build_index, query_rankings, report, split_captions, Checkpoint, Config,
};

#[derive(Parser)]
#[command(
    name = "tps",
    about = "Desk-scale text-based person search: synthetic corpus, dual encoders, retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate the synthetic dataset and write it as JSON/JSONL
    GenerateData(GenerateArgs),
    /// Parse captions into attribute phrases (JSONL out)
    Parse(TextInputArgs),
    /// Enumerate or sample multi-integrity descriptions (JSONL out)
    Mid(MidArgs),
    /// Generate dynamic attribute prompts (JSONL out)
    Prompts(TextInputArgs),
    /// Train the dual encoders on a generated dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint: R@k and mAP over a caption split
    Eval(EvalArgs),
    /// Summarize eval metrics across run directories
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Config file with the {corpus, ...} blocks; defaults apply if absent
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for captions.jsonl / images.json / lexicon.json
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct TextInputArgs {
    /// Single caption text; omit to read JSONL {"caption_id", "text"} from
    /// --input or stdin
    #[arg(long)]
    text: Option<String>,
    /// JSONL input file
    #[arg(long)]
    input: Option<PathBuf>,
    /// Lexicon JSON; the built-in one if omitted
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct MidArgs {
    #[command(flatten)]
    input: TextInputArgs,
    /// Erasure mode
    #[arg(long, value_enum, default_value_t = MidModeArg::AdjectiveAndPhrase)]
    mode: MidModeArg,
    /// Sample this many variants instead of emitting the full enumeration
    #[arg(long, short)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MidModeArg {
    AdjectiveAndPhrase,
    FullComponent,
}

impl From<MidModeArg> for MidMode {
    fn from(m: MidModeArg) -> MidMode {
        match m {
            MidModeArg::AdjectiveAndPhrase => MidMode::AdjectiveAndPhrase,
            MidModeArg::FullComponent => MidMode::FullComponent,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Config file; JSON with {corpus, encoder, loss, train} blocks
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory from generate-data; generated on the fly if
    /// omitted
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run output directory (checkpoints, loss.csv, vocab)
    #[arg(long, short, default_value = "runs/default")]
    out: PathBuf,
    /// Overrides train.seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from this checkpoint instead of initializing
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory; regenerated from the checkpoint's corpus config
    /// if omitted
    #[arg(long)]
    data: Option<PathBuf>,
    /// Caption split to query with
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Where to write the metrics JSON (stdout always gets a copy)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-query ranking CSV
    #[arg(long)]
    rank_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory whose subdirectories hold metrics.json files
    #[arg(long)]
    runs: PathBuf,
    /// Write the markdown table here (stdout otherwise)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the raw CSV table
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> Result<()> {
    let result = match Cli::parse().command {
        Commands::GenerateData(args) => generate_data(args),
        Commands::Parse(args) => parse_cmd(args),
        Commands::Mid(args) => mid_cmd(args),
        Commands::Prompts(args) => prompts_cmd(args),
        Commands::Train(args) => train_cmd(args),
        Commands::Eval(args) => eval_cmd(args),
        Commands::Report(args) => report_cmd(args),
    };
    // A closed stdout (e.g. piping into `head`) is a clean exit.
    if let Err(err) = &result {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::BrokenPipe {
                return Ok(());
            }
        }
    }
    result
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => {
            // Environment overrides still apply on top of the defaults.
            let mut value = serde_json::to_value(Config::default())?;
            trainer::config::apply_env_overrides(&mut value, std::env::vars());
            Ok(serde_json::from_value(value)?)
        }
    }
}

fn generate_data(args: GenerateArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let dataset = generate_dataset(&config.corpus, args.seed)?;
    write_dataset(&dataset, &args.out)?;
    eprintln!(
        "wrote {} identities, {} images, {} captions to {}",
        dataset.identities.len(),
        dataset.images.len(),
        dataset.captions.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Deserialize)]
struct CaptionLine {
    #[serde(default)]
    caption_id: usize,
    text: String,
}

fn input_captions(args: &TextInputArgs) -> Result<Vec<(usize, String)>> {
    if let Some(text) = &args.text {
        return Ok(vec![(0, text.clone())]);
    }
    let mut lines: Vec<String> = Vec::new();
    match &args.input {
        Some(path) => {
            let content = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            lines.extend(content.lines().map(str::to_string));
        }
        None => {
            let stdin = std::io::stdin();
            for line in stdin.lock().lines() {
                lines.push(line?);
            }
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let row: CaptionLine = serde_json::from_str(line)
                .with_context(|| format!("parsing JSONL line {}", i + 1))?;
            out.push((row.caption_id, row.text));
        } else {
            out.push((i, line.to_string()));
        }
    }
    Ok(out)
}

fn load_lexicon(path: &Option<PathBuf>) -> Result<Lexicon> {
    Ok(match path {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::builtin(),
    })
}

fn parse_cmd(args: TextInputArgs) -> Result<()> {
    let lexicon = load_lexicon(&args.lexicon)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (caption_id, text) in input_captions(&args)? {
        for phrase in parse_description(&text, &lexicon) {
            let row = serde_json::json!({
                "caption_id": caption_id,
                "adjectives": phrase.adjectives,
                "noun": phrase.noun,
                "noun_category": phrase.noun_category,
                "attribute_item": phrase.attribute_item,
                "span": phrase.span,
            });
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

fn mid_cmd(args: MidArgs) -> Result<()> {
    let lexicon = load_lexicon(&args.input.lexicon)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (caption_id, text) in input_captions(&args.input)? {
        let phrases = parse_description(&text, &lexicon);
        if phrases.is_empty() {
            continue;
        }
        let variants = enumerate_mids(&phrases, caption_id, args.mode.into())?;
        let picked = match args.k {
            Some(k) => sample_mids(&variants, k, args.seed),
            None => variants,
        };
        for v in picked {
            let row = serde_json::json!({
                "caption_id": v.source_caption_id,
                "states": v.kept,
                "text": v.text,
            });
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

fn prompts_cmd(args: TextInputArgs) -> Result<()> {
    let lexicon = load_lexicon(&args.lexicon)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (caption_id, text) in input_captions(&args)? {
        let phrases = parse_description(&text, &lexicon);
        for p in generate_prompts(&phrases, caption_id) {
            let row = serde_json::json!({
                "caption_id": p.source_caption_id,
                "kind": p.kind,
                "group_key": p.group_key,
                "text": p.text,
            });
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    let dataset = match &args.data {
        Some(dir) => load_dataset(dir)?,
        None => generate_dataset(&config.corpus, config.train.seed)?,
    };
    let outcome = match &args.resume {
        Some(ckpt) => trainer::resume(ckpt, &dataset, &args.out)?,
        None => trainer::train(&config, &dataset, &args.out)?,
    };
    eprintln!(
        "trained {} steps; checkpoint at {}",
        outcome.progress.step,
        outcome.checkpoint_path.display()
    );
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let model = ckpt.restore_model()?;
    let tokenizer = Tokenizer::new(ckpt.vocab.clone(), ckpt.config.encoder.max_text_len)?;
    let dataset = match &args.data {
        Some(dir) => load_dataset(dir)?,
        None => generate_dataset(&ckpt.config.corpus, ckpt.progress.seed)?,
    };
    let (train_idx, test_idx) =
        split_captions(&dataset, ckpt.config.train.heldout_captions_per_image);
    let query_indices: Vec<usize> = match args.split {
        SplitArg::Train => train_idx,
        SplitArg::Test => test_idx,
        SplitArg::All => (0..dataset.captions.len()).collect(),
    };
    if query_indices.is_empty() {
        bail!("selected split has no captions");
    }
    let index = build_index(&model, &tokenizer, &dataset, &query_indices)?;
    let metrics = evaluate(&index)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    println!("{text}");
    if let Some(path) = &args.out {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, &text)?;
    }
    if let Some(path) = &args.rank_csv {
        let rankings = query_rankings(&index);
        let mut csv = String::from("caption_id,identity_id,ranked_image_ids\n");
        for (qi, ranking) in rankings.iter().enumerate() {
            let ci = query_indices[qi];
            let ranked: Vec<String> = ranking.iter().map(|g| g.to_string()).collect();
            csv.push_str(&format!(
                "{},{},{}\n",
                dataset.captions[ci].caption_id,
                dataset.captions[ci].identity_id,
                ranked.join(" ")
            ));
        }
        std::fs::write(path, csv)?;
    }
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<()> {
    let runs = report::collect_runs(&args.runs)?;
    if runs.is_empty() {
        bail!("no run directories with metrics.json under {}", args.runs.display());
    }
    let md = report::render_markdown(&runs);
    match &args.out {
        Some(path) => std::fs::write(path, &md)?,
        None => print!("{md}"),
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, report::render_csv(&runs))?;
    }
    Ok(())
}
