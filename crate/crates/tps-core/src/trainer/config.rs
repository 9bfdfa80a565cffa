//! Run configuration: the four blocks {corpus, encoder, loss, train},
//! JSON-file loading, and environment overrides via upper-cased dotted
//! keys (`TRAIN.BASE_LR=0.001`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::encoders::EncoderConfig;
use crate::error::{CoreError, Result};
use crate::losses::LossParams;
use crate::midgen::MidMode;

/// Optimization and sampling knobs.
///
/// Defaults are the from-scratch desk preset (30 epochs, lr 1e-3);
/// fine-tuning pre-trained towers at full scale would run 60 epochs at
/// lr 1e-5 instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub k_m: usize,
    pub k_p: usize,
    pub seed: u64,
    pub mid_mode: MidMode,
    /// Re-render image noise freshly each epoch (the synthetic stand-in
    /// for photometric augmentation).
    pub rerender_noise: bool,
    /// Identity-balanced PK batch composition instead of a plain shuffle.
    pub pk_sampling: bool,
    /// Captions per image held out as the evaluation query split.
    pub heldout_captions_per_image: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Keep every per-epoch checkpoint instead of overwriting the latest.
    pub keep_all_checkpoints: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 30,
            warmup_epochs: 5,
            base_lr: 1e-3,
            weight_decay: 0.1,
            batch_size: 16,
            k_m: 3,
            k_p: 3,
            seed: 7,
            mid_mode: MidMode::AdjectiveAndPhrase,
            rerender_noise: true,
            pk_sampling: false,
            heldout_captions_per_image: 1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            keep_all_checkpoints: false,
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub corpus: CorpusConfig,
    pub encoder: EncoderConfig,
    pub loss: LossParams,
    pub train: TrainParams,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.train.warmup_epochs >= self.train.epochs {
            return Err(CoreError::Config(format!(
                "warmup_epochs {} must be < epochs {}",
                self.train.warmup_epochs, self.train.epochs
            )));
        }
        if self.train.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be >= 1".to_string()));
        }
        if self.train.heldout_captions_per_image >= self.corpus.captions_per_image {
            return Err(CoreError::Config(format!(
                "heldout_captions_per_image {} must be < captions_per_image {}",
                self.train.heldout_captions_per_image, self.corpus.captions_per_image
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CoreError::json(path, e))?;
        apply_env_overrides(&mut value, std::env::vars());
        let config: Config =
            serde_json::from_value(value).map_err(|e| CoreError::json(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
    }
}

/// Apply `BLOCK.FIELD=value` environment overrides onto the raw config
/// JSON. Keys are upper-cased dotted paths (`LOSS.LAMBDA0`, `TRAIN.K_M`);
/// values parse as JSON scalars, falling back to strings.
pub fn apply_env_overrides(
    value: &mut serde_json::Value,
    vars: impl Iterator<Item = (String, String)>,
) {
    const BLOCKS: [&str; 4] = ["corpus", "encoder", "loss", "train"];
    for (key, raw) in vars {
        let Some((block_part, field_part)) = key.split_once('.') else {
            continue;
        };
        let block = block_part.to_lowercase();
        if !BLOCKS.contains(&block.as_str()) {
            continue;
        }
        let field = field_part.to_lowercase();
        let parsed: serde_json::Value = serde_json::from_str(&raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        value
            .as_object_mut()
            .expect("config root is an object")
            .entry(block)
            .or_insert_with(|| serde_json::json!({}))
            .as_object_mut()
            .expect("config block is an object")
            .insert(field, parsed);
    }
}
