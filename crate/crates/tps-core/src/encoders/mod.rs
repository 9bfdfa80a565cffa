//! Dual tiny transformer encoders with a CLIP-like interface.
//!
//! The visual tower consumes patch-grid images through a linear patch
//! embedding with a class token; the text tower consumes tokenized
//! captions and reads its sentence feature at the end-of-text position.
//! Both towers emit a global feature and a GeM-pooled token feature whose
//! concatenation is the retrieval feature. The bottom layers of the text
//! tower (including the word-embedding table) can be frozen.

mod gem;
mod nn;
mod params;
mod tokenizer;
mod tower;

pub use gem::{gem_bwd, gem_fwd, gem_pool, GemCache, GEM_CLAMP};
pub use params::{Init, ParamStore, ParamStoreBuilder, TensorDef};
pub use tokenizer::{TokenizedText, Tokenizer, EOT, PAD, SOT, UNK};
pub use tower::{EmbeddingOutputs, TowerCache, TowerLayout};

use serde::{Deserialize, Serialize};

use crate::corpus::ImageSpec;
use crate::error::{CoreError, Result};

/// Architecture and pooling knobs for both towers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub visual_layers: usize,
    pub text_layers: usize,
    pub heads: usize,
    pub patch_count: usize,
    pub patch_dim: usize,
    pub max_text_len: usize,
    pub frozen_text_layers: usize,
    pub mlp_ratio: usize,
    pub gem_q: f64,
    pub gem_learnable: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            visual_layers: 4,
            text_layers: 4,
            heads: 4,
            patch_count: 48,
            patch_dim: 32,
            max_text_len: 32,
            frozen_text_layers: 2,
            mlp_ratio: 2,
            gem_q: 3.0,
            gem_learnable: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(CoreError::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.frozen_text_layers >= self.text_layers {
            return Err(CoreError::Config(format!(
                "frozen_text_layers {} must be < text_layers {}",
                self.frozen_text_layers, self.text_layers
            )));
        }
        if self.gem_q <= 1.0 {
            return Err(CoreError::Config(format!(
                "gem_q must be > 1, got {}",
                self.gem_q
            )));
        }
        if self.max_text_len < 3 {
            return Err(CoreError::Config("max_text_len must be >= 3".to_string()));
        }
        Ok(())
    }

    pub fn concat_dim(&self) -> usize {
        2 * self.embed_dim
    }
}

/// Both towers plus the classifier heads, backed by one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: EncoderConfig,
    pub n_classes: usize,
    pub vocab_size: usize,
    pub store: ParamStore,
    pub text: TowerLayout,
    pub vis: TowerLayout,
    /// Scalar GeM exponent tensor, frozen unless `gem_learnable`.
    pub gem_q: usize,
    /// Identity classifier rows for the visual and textual features.
    pub w_v: usize,
    pub w_t: usize,
}

impl Model {
    pub fn new(config: EncoderConfig, vocab_size: usize, n_classes: usize, seed: u64) -> Result<Model> {
        config.validate()?;
        let d = config.embed_dim;
        let hidden = d * config.mlp_ratio;
        let mut b = ParamStore::builder();
        let text = tower::register_text_tower(
            &mut b,
            vocab_size,
            config.max_text_len,
            config.text_layers,
            d,
            hidden,
        );
        let vis = tower::register_visual_tower(
            &mut b,
            config.patch_count,
            config.patch_dim,
            config.visual_layers,
            d,
            hidden,
        );
        let gem_q = b.tensor("gem.q", &[1], false, Init::Const(config.gem_q));
        let concat = 2 * d;
        let w_v = b.tensor("cls.w_v", &[n_classes, concat], true, Init::Normal(1.0));
        let w_t = b.tensor("cls.w_t", &[n_classes, concat], true, Init::Normal(1.0));
        let store = b.build(seed);
        Ok(Model {
            config,
            n_classes,
            vocab_size,
            store,
            text,
            vis,
            gem_q,
            w_v,
            w_t,
        })
    }

    pub fn q(&self) -> f64 {
        self.store.slice(self.gem_q)[0]
    }

    /// Encode tokenized text, returning features and the backward cache.
    pub fn encode_text_cached(&self, tokens: &TokenizedText) -> (EmbeddingOutputs, TowerCache) {
        tower::text_forward(
            &self.store,
            &self.text,
            tokens,
            self.config.embed_dim,
            self.config.heads,
            self.q(),
        )
    }

    /// Encode a caption string (tokenize + forward, no cache kept).
    pub fn encode_text(&self, text: &str, tokenizer: &Tokenizer) -> Result<EmbeddingOutputs> {
        let tokens = tokenizer.encode(text)?;
        Ok(self.encode_text_cached(&tokens).0)
    }

    pub fn text_backward(
        &self,
        cache: &TowerCache,
        d_concat: &[f64],
        grads: &mut [f64],
        d_q: Option<&mut f64>,
    ) {
        tower::text_backward(
            &self.store,
            &self.text,
            cache,
            d_concat,
            self.config.embed_dim,
            self.config.heads,
            self.q(),
            grads,
            d_q,
        );
    }

    /// Flatten and validate a patch grid against the configured shape.
    pub fn flatten_grid(&self, grid: &[Vec<f64>]) -> Result<Vec<f64>> {
        if grid.len() != self.config.patch_count {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} patches", self.config.patch_count),
                got: format!("{} patches", grid.len()),
            });
        }
        let mut flat = Vec::with_capacity(grid.len() * self.config.patch_dim);
        for row in grid {
            if row.len() != self.config.patch_dim {
                return Err(CoreError::ShapeMismatch {
                    expected: format!("patch_dim {}", self.config.patch_dim),
                    got: format!("patch_dim {}", row.len()),
                });
            }
            flat.extend_from_slice(row);
        }
        Ok(flat)
    }

    pub fn encode_image_cached(&self, patches: &[f64]) -> (EmbeddingOutputs, TowerCache) {
        tower::visual_forward(
            &self.store,
            &self.vis,
            patches,
            self.config.patch_count,
            self.config.patch_dim,
            self.config.embed_dim,
            self.config.heads,
            self.q(),
        )
    }

    /// Encode a patch-grid image.
    pub fn encode_image(&self, image: &ImageSpec) -> Result<EmbeddingOutputs> {
        let flat = self.flatten_grid(&image.grid)?;
        Ok(self.encode_image_cached(&flat).0)
    }

    pub fn visual_backward(
        &self,
        cache: &TowerCache,
        d_concat: &[f64],
        grads: &mut [f64],
        d_q: Option<&mut f64>,
    ) {
        tower::visual_backward(
            &self.store,
            &self.vis,
            cache,
            d_concat,
            self.config.patch_count,
            self.config.patch_dim,
            self.config.embed_dim,
            self.config.heads,
            self.q(),
            grads,
            d_q,
        );
    }

    /// Set how many bottom text blocks stay frozen (the word-embedding
    /// table freezes with them).
    pub fn set_frozen_layers(&mut self, n_frozen: usize) -> Result<()> {
        if n_frozen >= self.config.text_layers {
            return Err(CoreError::Argument(format!(
                "n_frozen {} must be < text_layers {}",
                n_frozen, self.config.text_layers
            )));
        }
        self.config.frozen_text_layers = n_frozen;
        Ok(())
    }

    /// Tensor ids excluded from gradient flow and updates: the bottom
    /// frozen text blocks, the word-embedding table alongside them, and
    /// the GeM exponent unless it is learnable.
    pub fn frozen_tensor_ids(&self) -> Vec<usize> {
        let mut ids = Vec::new();
        if self.config.frozen_text_layers > 0 {
            if let tower::TowerKind::Text { tok_emb } = self.text.kind {
                ids.push(tok_emb);
            }
            for block in &self.text.blocks[..self.config.frozen_text_layers] {
                ids.extend_from_slice(&block.tensor_ids());
            }
        }
        if !self.config.gem_learnable {
            ids.push(self.gem_q);
        }
        ids
    }

    /// Zero the gradient entries of every frozen tensor.
    pub fn zero_frozen_grads(&self, grads: &mut [f64]) {
        for id in self.frozen_tensor_ids() {
            let d = self.store.def(id);
            grads[d.offset..d.offset + d.len].fill(0.0);
        }
    }

    /// Names of all text-tower tensors (for stop-gradient assertions).
    pub fn text_tensor_ids(&self) -> Vec<usize> {
        let mut ids = Vec::new();
        if let tower::TowerKind::Text { tok_emb } = self.text.kind {
            ids.push(tok_emb);
        }
        ids.push(self.text.pos_emb);
        for block in &self.text.blocks {
            ids.extend_from_slice(&block.tensor_ids());
        }
        ids.extend_from_slice(&[self.text.ln_f_g, self.text.ln_f_b, self.text.proj]);
        ids
    }
}
