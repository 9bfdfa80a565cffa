//! End-to-end CLI checks: every subcommand over a small corpus, driving
//! the compiled binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn tps() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tps"))
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tps_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_config(dir: &Path) -> PathBuf {
    let config = serde_json::json!({
        "corpus": {"n_identities": 4, "images_per_identity": 2, "captions_per_image": 2},
        "encoder": {
            "embed_dim": 16, "visual_layers": 1, "text_layers": 2, "heads": 2,
            "max_text_len": 24, "frozen_text_layers": 1, "mlp_ratio": 2
        },
        "loss": {"n_classes": 4},
        "train": {"epochs": 2, "warmup_epochs": 1, "batch_size": 4, "k_m": 2, "k_p": 2, "seed": 3}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn parse_emits_phrase_jsonl() {
    let out = tps()
        .args(["parse", "--text", "A man wears a red shirt and black shorts."])
        .output()
        .unwrap();
    assert!(out.status.success());
    let lines: Vec<&str> = std::str::from_utf8(&out.stdout)
        .unwrap()
        .lines()
        .collect();
    assert_eq!(lines.len(), 3);
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["noun"], "man");
    assert_eq!(first["attribute_item"], "gender");
    let second: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(second["adjectives"][0], "red");
}

#[test]
fn mid_emits_expected_variant_count() {
    let out = tps()
        .args(["mid", "--text", "a red shirt and black shorts"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let lines: Vec<&str> = std::str::from_utf8(&out.stdout)
        .unwrap()
        .lines()
        .collect();
    assert_eq!(lines.len(), 7); // 3^2 - 2
    for line in lines {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(row["text"].as_str().unwrap().ends_with('.'));
        assert_eq!(row["states"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn mid_sampling_flag_limits_output() {
    let out = tps()
        .args(["mid", "--text", "a red shirt and black shorts", "-k", "3", "--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::str::from_utf8(&out.stdout).unwrap().lines().count(), 3);
}

#[test]
fn prompts_match_templates() {
    let out = tps()
        .args(["prompts", "--text", "A man wears a red shirt."])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::str::from_utf8(&out.stdout).unwrap();
    assert!(text.contains("\"text\":\"This person is a man.\""));
    assert!(text.contains("\"text\":\"The upper clothing of this person is red.\""));
    assert!(text.contains("\"text\":\"This person wears red shirt.\""));
}

#[test]
fn stdin_jsonl_round_trip() {
    use std::io::Write;
    let mut child = tps()
        .args(["parse"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all(b"{\"caption_id\": 42, \"text\": \"a lady with a silver watch\"}\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let row: serde_json::Value =
        serde_json::from_str(std::str::from_utf8(&out.stdout).unwrap().lines().next().unwrap())
            .unwrap();
    assert_eq!(row["caption_id"], 42);
    assert_eq!(row["noun"], "lady");
}

#[test]
fn full_pipeline_generate_train_eval_report() {
    let dir = tmp("pipeline");
    let config = small_config(&dir);
    let data = dir.join("data");

    let out = tps()
        .args([
            "generate-data",
            "--config",
            config.to_str().unwrap(),
            "--out",
            data.to_str().unwrap(),
            "--seed",
            "3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("captions.jsonl").exists());
    assert!(data.join("images.json").exists());
    assert!(data.join("lexicon.json").exists());

    let run = dir.join("runs").join("smoke");
    let out = tps()
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("checkpoint.json");
    assert!(ckpt.exists());
    assert!(run.join("loss.csv").exists());
    assert!(run.join("vocab.txt").exists());

    let metrics = run.join("metrics.json");
    let rank_csv = run.join("rankings.csv");
    let out = tps()
        .args([
            "eval",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--split",
            "test",
            "--out",
            metrics.to_str().unwrap(),
            "--rank-csv",
            rank_csv.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    for key in ["R1", "R5", "R10", "mAP"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    let rank_text = std::fs::read_to_string(&rank_csv).unwrap();
    assert!(rank_text.lines().count() > 1);

    let report_md = dir.join("report.md");
    let out = tps()
        .args([
            "report",
            "--runs",
            dir.join("runs").to_str().unwrap(),
            "--out",
            report_md.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let md = std::fs::read_to_string(&report_md).unwrap();
    assert!(md.contains("| smoke |"));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn env_overrides_reach_training() {
    let dir = tmp("env");
    let config = small_config(&dir);
    let run = dir.join("run");
    let out = tps()
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
        ])
        .env("TRAIN.EPOCHS", "1")
        .env("TRAIN.WARMUP_EPOCHS", "0")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["train"]["epochs"], 1);
    assert_eq!(saved["train"]["warmup_epochs"], 0);
    let _ = std::fs::remove_dir_all(&dir);
}
