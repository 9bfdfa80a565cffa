//! Cross-run comparison: collect `metrics.json` files from run
//! directories and render a markdown / CSV ablation table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::eval::RetrievalReport;
use crate::trainer::config::Config;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub k_m: Option<usize>,
    pub k_p: Option<usize>,
    pub lambda0: Option<f64>,
    pub lambda1: Option<f64>,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub map: f64,
}

/// Scan `runs_dir` for subdirectories containing `metrics.json` (written
/// by the `eval` subcommand) and, optionally, `config.json`.
pub fn collect_runs(runs_dir: &Path) -> Result<Vec<RunSummary>> {
    let mut runs = Vec::new();
    let entries = std::fs::read_dir(runs_dir).map_err(|e| CoreError::io(runs_dir, e))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let metrics_path = dir.join("metrics.json");
        if !metrics_path.exists() {
            continue;
        }
        let text =
            std::fs::read_to_string(&metrics_path).map_err(|e| CoreError::io(&metrics_path, e))?;
        let metrics: RetrievalReport =
            serde_json::from_str(&text).map_err(|e| CoreError::json(&metrics_path, e))?;
        let config = Config::load(&dir.join("config.json")).ok();
        runs.push(RunSummary {
            name: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            k_m: config.as_ref().map(|c| c.train.k_m),
            k_p: config.as_ref().map(|c| c.train.k_p),
            lambda0: config.as_ref().map(|c| c.loss.lambda0),
            lambda1: config.as_ref().map(|c| c.loss.lambda1),
            r1: metrics.r1,
            r5: metrics.r5,
            r10: metrics.r10,
            map: metrics.map,
        });
    }
    Ok(runs)
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".to_string())
}

pub fn render_markdown(runs: &[RunSummary]) -> String {
    let mut out = String::from("| run | K_m | K_p | R@1 | R@5 | R@10 | mAP |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for r in runs {
        out.push_str(&format!(
            "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.name,
            opt_usize(r.k_m),
            opt_usize(r.k_p),
            r.r1,
            r.r5,
            r.r10,
            r.map
        ));
    }
    out
}

pub fn render_csv(runs: &[RunSummary]) -> String {
    let mut out = String::from("run,K_m,K_p,lambda0,lambda1,R1,R5,R10,mAP\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.name,
            opt_usize(r.k_m),
            opt_usize(r.k_p),
            r.lambda0.map(|x| x.to_string()).unwrap_or_else(|| "-".into()),
            r.lambda1.map(|x| x.to_string()).unwrap_or_else(|| "-".into()),
            r.r1,
            r.r5,
            r.r10,
            r.map
        ));
    }
    out
}
