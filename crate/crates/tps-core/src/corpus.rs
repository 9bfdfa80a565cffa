//! Synthetic attribute-grounded corpus.
//!
//! Each identity is a bundle of attribute values (gender plus 3-5 worn or
//! carried items). Images are patch grids: every attribute value owns a
//! fixed base vector written into the grid region of its item, plus
//! Gaussian noise. Captions are template sentences over a random subset of
//! the identity's attributes, built so that `textparse` recovers the
//! mentioned phrases exactly.
//!
//! All generation is a pure function of (config, seed).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::exec;
use crate::rng::{fnv1a64, rng_for};
use crate::textparse::{
    parse_description, AttributeItem, AttributePhrase, Lexicon, NounCategory,
};

/// One attribute slot of an identity: an object noun with 0-2 adjectives.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeValue {
    pub item: AttributeItem,
    pub noun: String,
    pub adjectives: Vec<String>,
}

impl AttributeValue {
    pub fn category(&self) -> NounCategory {
        match self.item {
            AttributeItem::Gender => NounCategory::GenderNoun,
            AttributeItem::Accessory => NounCategory::DecorationNoun,
            _ => NounCategory::WearingNoun,
        }
    }

    fn hash_key(&self) -> String {
        format!("{}|{}|{}", self.item.key(), self.noun, self.adjectives.join(","))
    }
}

/// A synthetic person: the class label plus its attribute bundle,
/// kept in canonical item order (head first, gender last).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Identity {
    pub id: usize,
    pub attributes: Vec<AttributeValue>,
}

impl Identity {
    pub fn attribute(&self, item: AttributeItem) -> Option<&AttributeValue> {
        self.attributes.iter().find(|a| a.item == item)
    }
}

/// Patch-grid image: `rows * cols` patches of `patch_dim` values each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageSpec {
    pub image_id: usize,
    pub identity_id: usize,
    pub noise_seed: u64,
    /// Row-major patch list, each of length `patch_dim`.
    pub grid: Vec<Vec<f64>>,
}

/// One caption of one image. `phrases` is populated by `textparse` and is
/// not persisted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub caption_id: usize,
    pub identity_id: usize,
    pub image_id: usize,
    pub text: String,
    #[serde(skip)]
    pub phrases: Vec<AttributePhrase>,
}

/// Grid layout and the item -> region map.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub patch_dim: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            rows: 12,
            cols: 4,
            patch_dim: 32,
        }
    }
}

impl GridConfig {
    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Patch indices of an item's region. Head takes the top rows, upper
    /// and lower clothing the middle bands, feet the outer bottom columns,
    /// accessories the inner bottom columns. Gender is a bias over all
    /// patches rather than a region.
    pub fn region(&self, item: AttributeItem) -> Vec<usize> {
        let rows = |lo: usize, hi: usize| -> Vec<usize> {
            (lo..=hi.min(self.rows - 1))
                .flat_map(|r| (0..self.cols).map(move |c| r * self.cols + c))
                .collect()
        };
        match item {
            AttributeItem::HeadItem => rows(0, 1),
            AttributeItem::UpperClothing => rows(2, 5),
            AttributeItem::LowerClothing => rows(6, 8),
            AttributeItem::FootItem => (9..self.rows)
                .flat_map(|r| [r * self.cols, r * self.cols + self.cols - 1])
                .collect(),
            AttributeItem::Accessory => (9..self.rows)
                .flat_map(|r| (1..self.cols - 1).map(move |c| r * self.cols + c))
                .collect(),
            AttributeItem::Gender => (0..self.patch_count()).collect(),
        }
    }
}

/// Knobs for [`generate_dataset`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub captions_per_image: usize,
    pub noise_sigma: f64,
    /// Lexicon file; `None` uses the built-in one.
    pub lexicon: Option<PathBuf>,
    /// Resample identities until no attribute value is shared between any
    /// two of them. Only feasible for small corpora.
    pub distinct_attributes: bool,
    pub grid: GridConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_identities: 50,
            images_per_identity: 4,
            captions_per_image: 3,
            noise_sigma: 0.1,
            lexicon: None,
            distinct_attributes: false,
            grid: GridConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn load_lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon {
            Some(path) => Lexicon::load(path),
            None => Ok(Lexicon::builtin()),
        }
    }
}

/// The generated corpus, held fully in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: CorpusConfig,
    pub seed: u64,
    pub identities: Vec<Identity>,
    pub images: Vec<ImageSpec>,
    pub captions: Vec<CaptionRecord>,
    pub lexicon: Lexicon,
}

impl Dataset {
    pub fn image(&self, image_id: usize) -> &ImageSpec {
        &self.images[image_id]
    }

    pub fn identity(&self, id: usize) -> &Identity {
        &self.identities[id]
    }
}

const ADJECTIVE_COUNT_WEIGHTS: [(usize, u32); 3] = [(0, 15), (1, 50), (2, 35)];

fn sample_adjective_count(rng: &mut impl Rng) -> usize {
    let total: u32 = ADJECTIVE_COUNT_WEIGHTS.iter().map(|(_, w)| w).sum();
    let mut pick = rng.gen_range(0..total);
    for (count, w) in ADJECTIVE_COUNT_WEIGHTS {
        if pick < w {
            return count;
        }
        pick -= w;
    }
    unreachable!()
}

fn sample_identity(id: usize, lexicon: &Lexicon, rng: &mut impl Rng) -> Identity {
    let n_items = rng.gen_range(3..=5usize);
    let mut items: Vec<AttributeItem> = AttributeItem::WEARABLE.to_vec();
    items.shuffle(rng);
    items.truncate(n_items);
    items.sort();

    let mut attributes = Vec::with_capacity(n_items + 1);
    for item in items {
        let entry = lexicon.entry(item);
        let noun = entry.nouns[rng.gen_range(0..entry.nouns.len())].clone();
        let n_adj = sample_adjective_count(rng).min(entry.adjectives.len());
        let mut pool: Vec<&String> = entry.adjectives.iter().collect();
        pool.shuffle(rng);
        let mut adjectives: Vec<String> = pool.into_iter().take(n_adj).cloned().collect();
        adjectives.sort();
        attributes.push(AttributeValue {
            item,
            noun,
            adjectives,
        });
    }
    let genders = &lexicon.entry(AttributeItem::Gender).nouns;
    attributes.push(AttributeValue {
        item: AttributeItem::Gender,
        noun: genders[rng.gen_range(0..genders.len())].clone(),
        adjectives: vec![],
    });
    attributes.sort_by_key(|a| a.item);
    Identity { id, attributes }
}

/// Generate the identity roster. Full attribute bundles are unique; with
/// `distinct_attributes` no single attribute value repeats across
/// identities either.
pub fn generate_identities(
    config: &CorpusConfig,
    lexicon: &Lexicon,
    seed: u64,
) -> Result<Vec<Identity>> {
    let mut identities = Vec::with_capacity(config.n_identities);
    let mut seen_bundles: BTreeSet<String> = BTreeSet::new();
    let mut used_values: BTreeSet<String> = BTreeSet::new();

    for id in 0..config.n_identities {
        let mut accepted = None;
        for attempt in 0..200u64 {
            let mut rng = rng_for(seed, "identity", &[id as u64, attempt]);
            let cand = sample_identity(id, lexicon, &mut rng);
            let bundle: String = cand
                .attributes
                .iter()
                .map(|a| a.hash_key())
                .collect::<Vec<_>>()
                .join(";");
            if seen_bundles.contains(&bundle) {
                continue;
            }
            if config.distinct_attributes
                && cand
                    .attributes
                    .iter()
                    .any(|a| used_values.contains(&a.hash_key()))
            {
                continue;
            }
            seen_bundles.insert(bundle);
            for a in &cand.attributes {
                used_values.insert(a.hash_key());
            }
            accepted = Some(cand);
            break;
        }
        identities.push(accepted.ok_or_else(|| {
            CoreError::Config(format!(
                "could not sample a distinct identity after 200 tries (id {id}); \
                 the lexicon is too small for this corpus"
            ))
        })?);
    }
    Ok(identities)
}

/// Fixed base vector of an attribute value, a pure function of
/// (item, noun, adjectives) so that semantics are stable across datasets.
pub fn attribute_base_vector(attr: &AttributeValue, patch_dim: usize) -> Vec<f64> {
    let mut rng = rng_for(fnv1a64(attr.hash_key().as_bytes()), "attr_base", &[]);
    (0..patch_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

/// Scale of the gender bias added to every patch.
const GENDER_BIAS_SCALE: f64 = 0.5;

/// Render an identity into a patch grid: base vectors into item regions,
/// the gender bias everywhere, then per-element Gaussian noise.
pub fn render_image(
    identity: &Identity,
    grid_config: &GridConfig,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if noise_sigma < 0.0 {
        return Err(CoreError::Argument(format!(
            "noise_sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let mut grid = vec![vec![0.0f64; grid_config.patch_dim]; grid_config.patch_count()];
    for attr in &identity.attributes {
        let base = attribute_base_vector(attr, grid_config.patch_dim);
        let scale = if attr.item == AttributeItem::Gender {
            GENDER_BIAS_SCALE
        } else {
            1.0
        };
        for p in grid_config.region(attr.item) {
            for (dst, b) in grid[p].iter_mut().zip(&base) {
                *dst += scale * b;
            }
        }
    }
    if noise_sigma > 0.0 {
        let mut rng = rng_for(seed, "image_noise", &[identity.id as u64]);
        for patch in &mut grid {
            for v in patch.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += noise_sigma * n;
            }
        }
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// Caption templates
// ---------------------------------------------------------------------------

/// A phrase to be rendered into a sentence; the unit shared by caption
/// generation and MID re-rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderPhrase {
    pub adjectives: Vec<String>,
    pub noun: String,
    pub category: NounCategory,
}

impl RenderPhrase {
    pub fn from_attribute(attr: &AttributeValue) -> Self {
        RenderPhrase {
            adjectives: attr.adjectives.clone(),
            noun: attr.noun.clone(),
            category: attr.category(),
        }
    }

    pub fn from_phrase(phrase: &AttributePhrase) -> Self {
        RenderPhrase {
            adjectives: phrase.adjectives.clone(),
            noun: phrase.noun.clone(),
            category: phrase.noun_category,
        }
    }
}

struct Template {
    subject_gender: &'static str, // "{}" is the gender noun
    subject_plain: &'static str,
    wear_verb: &'static str,
    deco_join: &'static str,
    deco_verb: &'static str,
}

/// Six sentence skeletons. None of their filler words appear in the
/// built-in lexicon, so the parser recovers exactly the filled phrases.
const TEMPLATES: [Template; 6] = [
    Template {
        subject_gender: "A {}",
        subject_plain: "This person",
        wear_verb: "wears",
        deco_join: "and has",
        deco_verb: "has",
    },
    Template {
        subject_gender: "This {}",
        subject_plain: "This person",
        wear_verb: "is wearing",
        deco_join: "and is carrying",
        deco_verb: "is carrying",
    },
    Template {
        subject_gender: "The {}",
        subject_plain: "The person",
        wear_verb: "is dressed in",
        deco_join: "together with",
        deco_verb: "carries",
    },
    Template {
        subject_gender: "A {}",
        subject_plain: "Someone",
        wear_verb: "can be seen wearing",
        deco_join: "and holding",
        deco_verb: "is holding",
    },
    Template {
        subject_gender: "There is a {} who",
        subject_plain: "There is a person who",
        wear_verb: "wears",
        deco_join: "and carries",
        deco_verb: "carries",
    },
    Template {
        subject_gender: "A {}",
        subject_plain: "A person",
        wear_verb: "is photographed in",
        deco_join: "and with",
        deco_verb: "has",
    },
];

pub const TEMPLATE_COUNT: usize = TEMPLATES.len();

/// Every filler word the caption templates can emit (lowercased), for
/// vocabulary construction.
pub fn template_words() -> Vec<String> {
    let mut words = std::collections::BTreeSet::new();
    for t in &TEMPLATES {
        for frag in [
            t.subject_gender,
            t.subject_plain,
            t.wear_verb,
            t.deco_join,
            t.deco_verb,
        ] {
            for w in crate::textparse::tokenize(&frag.replace("{}", "")) {
                words.insert(w);
            }
        }
    }
    // The gender-only fallback sentence and articles.
    for w in ["this", "person", "is", "a", "an", "and"] {
        words.insert(w.to_string());
    }
    words.into_iter().collect()
}

fn article_for(word: &str) -> Option<&'static str> {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => Some("an"),
        Some(_) => Some("a"),
        None => None,
    }
}

fn noun_phrase_text(p: &RenderPhrase, with_article: bool) -> String {
    let mut words: Vec<&str> = Vec::new();
    for (i, adj) in p.adjectives.iter().enumerate() {
        if i > 0 {
            words.push("and");
        }
        words.push(adj);
    }
    // An empty noun (dangling-adjective MIDs) renders just the adjectives,
    // with no article.
    if !p.noun.is_empty() {
        words.push(&p.noun);
        // Plurality comes from the noun, a/an from the first word.
        if with_article && !p.noun.ends_with('s') {
            if let Some(article) = article_for(words[0]) {
                return format!("{article} {}", words.join(" "));
            }
        }
    }
    words.join(" ")
}

fn join_list(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        _ => {
            let head = &items[..items.len() - 1];
            format!("{} and {}", head.join(", "), items.last().unwrap())
        }
    }
}

/// Render phrases into one grammatical sentence using template
/// `template_idx`. Wearing items come before decorations; a gender phrase
/// becomes the subject.
pub fn render_phrases(phrases: &[RenderPhrase], template_idx: usize) -> String {
    let t = &TEMPLATES[template_idx % TEMPLATES.len()];
    let gender = phrases
        .iter()
        .find(|p| p.category == NounCategory::GenderNoun);
    let wear: Vec<String> = phrases
        .iter()
        .filter(|p| p.category == NounCategory::WearingNoun)
        .map(|p| noun_phrase_text(p, true))
        .collect();
    let deco: Vec<String> = phrases
        .iter()
        .filter(|p| p.category == NounCategory::DecorationNoun)
        .map(|p| noun_phrase_text(p, true))
        .collect();

    let subject = match gender {
        Some(g) => t.subject_gender.replace("{}", &g.noun),
        None => t.subject_plain.to_string(),
    };

    let body = match (wear.is_empty(), deco.is_empty()) {
        (false, false) => format!(
            "{subject} {} {} {} {}",
            t.wear_verb,
            join_list(&wear),
            t.deco_join,
            join_list(&deco)
        ),
        (false, true) => format!("{subject} {} {}", t.wear_verb, join_list(&wear)),
        (true, false) => format!("{subject} {} {}", t.deco_verb, join_list(&deco)),
        (true, true) => match gender {
            Some(g) => format!("This person is a {}", g.noun),
            None => "This person".to_string(),
        },
    };
    format!("{body}.")
}

/// Render a caption over a random attribute subset and return it together
/// with the phrase list the parser is expected to recover, in span order.
pub fn render_caption_with_phrases(
    identity: &Identity,
    subset_size: usize,
    seed: u64,
) -> Result<(String, Vec<RenderPhrase>)> {
    let n = identity.attributes.len();
    if subset_size < 2 || subset_size > n {
        return Err(CoreError::Argument(format!(
            "subset_size {subset_size} out of range [2, {n}]"
        )));
    }
    let mut rng = rng_for(seed, "caption", &[identity.id as u64]);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(subset_size);
    idx.sort();
    let template_idx = rng.gen_range(0..TEMPLATES.len());

    let chosen: Vec<RenderPhrase> = idx
        .iter()
        .map(|&i| RenderPhrase::from_attribute(&identity.attributes[i]))
        .collect();
    let text = render_phrases(&chosen, template_idx);

    // Span order in the rendered sentence: gender subject first, then
    // wearing items, then decorations.
    let mut ordered: Vec<RenderPhrase> = Vec::with_capacity(chosen.len());
    for cat in [
        NounCategory::GenderNoun,
        NounCategory::WearingNoun,
        NounCategory::DecorationNoun,
    ] {
        ordered.extend(chosen.iter().filter(|p| p.category == cat).cloned());
    }
    Ok((text, ordered))
}

/// Render a caption sentence over a random subset of the identity's
/// attributes. Deterministic in (identity, subset_size, seed).
pub fn render_caption(identity: &Identity, subset_size: usize, seed: u64) -> Result<String> {
    render_caption_with_phrases(identity, subset_size, seed).map(|(text, _)| text)
}

/// Generate the full corpus: identities, rendered images, captions with
/// parsed phrases. Deterministic for fixed (config, seed).
pub fn generate_dataset(config: &CorpusConfig, seed: u64) -> Result<Dataset> {
    if config.n_identities < 2 {
        return Err(CoreError::Config(format!(
            "n_identities must be >= 2, got {}",
            config.n_identities
        )));
    }
    if config.images_per_identity < 1 || config.captions_per_image < 1 {
        return Err(CoreError::Config(
            "images_per_identity and captions_per_image must be >= 1".to_string(),
        ));
    }
    let lexicon = config.load_lexicon()?;
    let identities = generate_identities(config, &lexicon, seed)?;

    let n_images = config.n_identities * config.images_per_identity;
    let images = exec::map_indexed(n_images, |image_id| {
        let identity = &identities[image_id / config.images_per_identity];
        let noise_seed = crate::rng::derive_seed(seed, "image", &[image_id as u64]);
        let grid = render_image(identity, &config.grid, config.noise_sigma, noise_seed)
            .expect("noise_sigma validated");
        ImageSpec {
            image_id,
            identity_id: identity.id,
            noise_seed,
            grid,
        }
    });

    let n_captions = n_images * config.captions_per_image;
    let captions = exec::map_indexed(n_captions, |caption_id| {
        let image_id = caption_id / config.captions_per_image;
        let identity = &identities[image_id / config.images_per_identity];
        let cap_seed = crate::rng::derive_seed(seed, "caption", &[caption_id as u64]);
        let n_attrs = identity.attributes.len();
        let subset_size = rng_for(cap_seed, "subset_size", &[]).gen_range(2..=n_attrs);
        let (text, _) = render_caption_with_phrases(identity, subset_size, cap_seed)
            .expect("subset_size is in range");
        let phrases = parse_description(&text, &lexicon);
        CaptionRecord {
            caption_id,
            identity_id: identity.id,
            image_id,
            text,
            phrases,
        }
    });

    Ok(Dataset {
        config: config.clone(),
        seed,
        identities,
        images,
        captions,
        lexicon,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CaptionRow<'a> {
    caption_id: usize,
    identity_id: usize,
    image_id: usize,
    text: std::borrow::Cow<'a, str>,
}

#[derive(Serialize, Deserialize)]
struct ImageRow {
    image_id: usize,
    identity_id: usize,
    grid: Vec<Vec<f64>>,
}

/// Write the dataset as diff-able JSON: `captions.jsonl` (one record per
/// caption), `images.json` (array), `identities.json`, `lexicon.json`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;

    let captions_path = dir.join("captions.jsonl");
    let mut lines = String::new();
    for c in &dataset.captions {
        let row = CaptionRow {
            caption_id: c.caption_id,
            identity_id: c.identity_id,
            image_id: c.image_id,
            text: std::borrow::Cow::from(&c.text),
        };
        lines.push_str(&serde_json::to_string(&row).expect("caption row serializes"));
        lines.push('\n');
    }
    std::fs::write(&captions_path, lines).map_err(|e| CoreError::io(&captions_path, e))?;

    let images_path = dir.join("images.json");
    let rows: Vec<ImageRow> = dataset
        .images
        .iter()
        .map(|im| ImageRow {
            image_id: im.image_id,
            identity_id: im.identity_id,
            grid: im.grid.clone(),
        })
        .collect();
    let text = serde_json::to_string(&rows).expect("image rows serialize");
    std::fs::write(&images_path, text).map_err(|e| CoreError::io(&images_path, e))?;

    let ids_path = dir.join("identities.json");
    let text = serde_json::to_string_pretty(&dataset.identities).expect("identities serialize");
    std::fs::write(&ids_path, text).map_err(|e| CoreError::io(&ids_path, e))?;

    dataset.lexicon.save(&dir.join("lexicon.json"))?;

    let meta_path = dir.join("config.json");
    let meta = serde_json::json!({ "corpus": dataset.config, "seed": dataset.seed });
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta"))
        .map_err(|e| CoreError::io(&meta_path, e))
}

/// Load a dataset written by [`write_dataset`]. Caption phrases are
/// re-derived by parsing, not read from disk.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let lexicon = Lexicon::load(&dir.join("lexicon.json"))?;

    let meta_path = dir.join("config.json");
    let meta_text =
        std::fs::read_to_string(&meta_path).map_err(|e| CoreError::io(&meta_path, e))?;
    let meta: serde_json::Value =
        serde_json::from_str(&meta_text).map_err(|e| CoreError::json(&meta_path, e))?;
    let config: CorpusConfig = serde_json::from_value(meta["corpus"].clone())
        .map_err(|e| CoreError::json(&meta_path, e))?;
    let seed = meta["seed"].as_u64().unwrap_or(0);

    let ids_path = dir.join("identities.json");
    let ids_text = std::fs::read_to_string(&ids_path).map_err(|e| CoreError::io(&ids_path, e))?;
    let identities: Vec<Identity> =
        serde_json::from_str(&ids_text).map_err(|e| CoreError::json(&ids_path, e))?;

    let images_path = dir.join("images.json");
    let img_text =
        std::fs::read_to_string(&images_path).map_err(|e| CoreError::io(&images_path, e))?;
    let rows: Vec<ImageRow> =
        serde_json::from_str(&img_text).map_err(|e| CoreError::json(&images_path, e))?;
    let images: Vec<ImageSpec> = rows
        .into_iter()
        .map(|r| ImageSpec {
            image_id: r.image_id,
            identity_id: r.identity_id,
            noise_seed: 0,
            grid: r.grid,
        })
        .collect();

    let captions_path = dir.join("captions.jsonl");
    let cap_text =
        std::fs::read_to_string(&captions_path).map_err(|e| CoreError::io(&captions_path, e))?;
    let mut captions = Vec::new();
    for line in cap_text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: CaptionRow =
            serde_json::from_str(line).map_err(|e| CoreError::json(&captions_path, e))?;
        let text = row.text.into_owned();
        let phrases = parse_description(&text, &lexicon);
        captions.push(CaptionRecord {
            caption_id: row.caption_id,
            identity_id: row.identity_id,
            image_id: row.image_id,
            text,
            phrases,
        });
    }

    Ok(Dataset {
        config,
        seed,
        identities,
        images,
        captions,
        lexicon,
    })
}
