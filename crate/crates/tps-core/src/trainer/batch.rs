//! Batch assembly: caption records into tokenized training items with
//! sampled MIDs and prompts.

use crate::corpus::Dataset;
use crate::dapgen::{generate_prompts, sample_prompts};
use crate::encoders::{TokenizedText, Tokenizer};
use crate::error::Result;
use crate::midgen::{enumerate_mids, sample_mids, MidMode};
use crate::rng::derive_seed;

/// One image-caption pair with its sampled MID and prompt texts, fully
/// tokenized.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub caption_id: usize,
    pub image_id: usize,
    pub label: usize,
    /// Flattened patch grid.
    pub image: Vec<f64>,
    pub caption: TokenizedText,
    pub mids: Vec<TokenizedText>,
    /// (tokens, group_key) per sampled prompt.
    pub prompts: Vec<(TokenizedText, String)>,
}

#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

/// Assemble a batch from caption indices. `epoch_images`, when given,
/// holds re-rendered flattened grids indexed by image id; otherwise the
/// dataset's persisted grids are used. Deterministic in `seed`.
pub fn assemble_batch(
    dataset: &Dataset,
    indices: &[usize],
    k_m: usize,
    k_p: usize,
    mid_mode: MidMode,
    tokenizer: &Tokenizer,
    seed: u64,
    epoch_images: Option<&[Vec<f64>]>,
) -> Result<Batch> {
    let mut items = Vec::with_capacity(indices.len());
    for &ci in indices {
        let record = &dataset.captions[ci];
        let image = match epoch_images {
            Some(imgs) => imgs[record.image_id].clone(),
            None => dataset.images[record.image_id]
                .grid
                .iter()
                .flatten()
                .copied()
                .collect(),
        };
        let caption = tokenizer.encode(&record.text)?;

        let mids = if k_m > 0 {
            let pool = enumerate_mids(&record.phrases, record.caption_id, mid_mode)?;
            let picks = sample_mids(&pool, k_m, derive_seed(seed, "mid", &[ci as u64]));
            picks
                .iter()
                .map(|m| tokenizer.encode(&m.text))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        let prompts = if k_p > 0 {
            let pool = generate_prompts(&record.phrases, record.caption_id);
            let picks = sample_prompts(&pool, k_p, derive_seed(seed, "pmt", &[ci as u64]));
            picks
                .iter()
                .map(|p| Ok((tokenizer.encode(&p.text)?, p.group_key.clone())))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        items.push(BatchItem {
            caption_id: record.caption_id,
            image_id: record.image_id,
            label: record.identity_id,
            image,
            caption,
            mids,
            prompts,
        });
    }
    Ok(Batch { items })
}
