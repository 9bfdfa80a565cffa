//! Checkpoints: the flat name -> tensor map plus config, vocabulary and
//! optimizer state, all in one JSON file so a run can resume bit-for-bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::Model;
use crate::error::{CoreError, Result};
use crate::trainer::adamw::AdamW;
use crate::trainer::config::Config;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorBlob {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Progress counters and loss history of a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Progress {
    /// Next epoch to execute.
    pub epoch: usize,
    /// Global step counter.
    pub step: usize,
    pub seed: u64,
    /// Per-step rows (step, cls, align, int, pmt, total).
    pub loss_history: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: Config,
    pub vocab: Vec<String>,
    pub n_classes: usize,
    pub progress: Progress,
    pub tensors: BTreeMap<String, TensorBlob>,
    pub adam: Option<AdamW>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        config: &Config,
        vocab: Vec<String>,
        progress: Progress,
        adam: Option<&AdamW>,
    ) -> Checkpoint {
        let mut tensors = BTreeMap::new();
        for (id, def) in model.store.defs.iter().enumerate() {
            tensors.insert(
                def.name.clone(),
                TensorBlob {
                    shape: def.shape.clone(),
                    data: model.store.slice(id).to_vec(),
                },
            );
        }
        Checkpoint {
            config: config.clone(),
            vocab,
            n_classes: model.n_classes,
            progress,
            tensors,
            adam: adam.cloned(),
        }
    }

    /// Rebuild the model from the stored tensors, shape-checked.
    pub fn restore_model(&self) -> Result<Model> {
        let vocab_size = self.vocab.len() + 4; // specials
        let mut model = Model::new(
            self.config.encoder.clone(),
            vocab_size,
            self.n_classes,
            self.progress.seed,
        )?;
        for (id, def) in model.store.defs.clone().iter().enumerate() {
            let blob = self.tensors.get(&def.name).ok_or_else(|| {
                CoreError::Config(format!("checkpoint is missing tensor {:?}", def.name))
            })?;
            if blob.shape != def.shape {
                return Err(CoreError::ShapeMismatch {
                    expected: format!("{:?} for {}", def.shape, def.name),
                    got: format!("{:?}", blob.shape),
                });
            }
            model.store.slice_mut(id).copy_from_slice(&blob.data);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CoreError::json(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderConfig;

    #[test]
    fn model_round_trips_bitwise() {
        let encoder = EncoderConfig {
            embed_dim: 16,
            visual_layers: 1,
            text_layers: 2,
            heads: 2,
            patch_count: 4,
            patch_dim: 3,
            max_text_len: 8,
            frozen_text_layers: 1,
            mlp_ratio: 2,
            ..EncoderConfig::default()
        };
        let config = Config {
            encoder: encoder.clone(),
            ..Config::default()
        };
        let model = Model::new(encoder, 6, 3, 42).unwrap(); // 2 words + 4 specials
        let ckpt = Checkpoint::from_model(
            &model,
            &config,
            vec!["red".into(), "shirt".into()],
            Progress {
                epoch: 2,
                step: 17,
                seed: 42,
                loss_history: vec![[0.0, 1.0, 2.0, 0.0, 0.0, 3.0]],
            },
            None,
        );
        let path = std::env::temp_dir().join(format!("tps_ckpt_{}.json", std::process::id()));
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.progress.step, 17);
        let restored = loaded.restore_model().unwrap();
        assert_eq!(restored.store.data.len(), model.store.data.len());
        for (a, b) in restored.store.data.iter().zip(&model.store.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let _ = std::fs::remove_file(&path);
    }
}
