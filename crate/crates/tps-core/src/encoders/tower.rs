//! The two encoder towers: stacks of pre-norm blocks over either word
//! embeddings (text) or linearly embedded patches with a class token
//! (visual), finished by a layernorm, a shared-space projection, and the
//! global + GeM-pooled feature pair.

use serde::{Deserialize, Serialize};

use crate::encoders::gem::{gem_bwd, gem_fwd, GemCache};
use crate::encoders::nn::{
    block_bwd, block_fwd, layernorm_bwd, layernorm_fwd, linear_bwd, linear_fwd, BlockCache,
    BlockLayout, LnCache,
};
use crate::encoders::params::{Init, ParamStore, ParamStoreBuilder};
use crate::encoders::tokenizer::{TokenizedText, PAD};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TowerKind {
    Text { tok_emb: usize },
    Visual { patch_w: usize, patch_b: usize, cls: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TowerLayout {
    pub kind: TowerKind,
    pub pos_emb: usize,
    pub blocks: Vec<BlockLayout>,
    pub ln_f_g: usize,
    pub ln_f_b: usize,
    pub proj: usize,
}

pub fn register_block(b: &mut ParamStoreBuilder, prefix: &str, d: usize, hidden: usize) -> BlockLayout {
    let w_init = Init::Normal(1.0 / (d as f64).sqrt());
    let mlp_init = Init::Normal(1.0 / (hidden as f64).sqrt());
    BlockLayout {
        ln1_g: b.tensor(format!("{prefix}.ln1.g"), &[d], false, Init::Ones),
        ln1_b: b.tensor(format!("{prefix}.ln1.b"), &[d], false, Init::Zeros),
        wq: b.tensor(format!("{prefix}.attn.wq"), &[d, d], true, w_init),
        bq: b.tensor(format!("{prefix}.attn.bq"), &[d], false, Init::Zeros),
        wk: b.tensor(format!("{prefix}.attn.wk"), &[d, d], true, w_init),
        bk: b.tensor(format!("{prefix}.attn.bk"), &[d], false, Init::Zeros),
        wv: b.tensor(format!("{prefix}.attn.wv"), &[d, d], true, w_init),
        bv: b.tensor(format!("{prefix}.attn.bv"), &[d], false, Init::Zeros),
        wo: b.tensor(format!("{prefix}.attn.wo"), &[d, d], true, w_init),
        bo: b.tensor(format!("{prefix}.attn.bo"), &[d], false, Init::Zeros),
        ln2_g: b.tensor(format!("{prefix}.ln2.g"), &[d], false, Init::Ones),
        ln2_b: b.tensor(format!("{prefix}.ln2.b"), &[d], false, Init::Zeros),
        w1: b.tensor(format!("{prefix}.mlp.w1"), &[d, hidden], true, w_init),
        b1: b.tensor(format!("{prefix}.mlp.b1"), &[hidden], false, Init::Zeros),
        w2: b.tensor(format!("{prefix}.mlp.w2"), &[hidden, d], true, mlp_init),
        b2: b.tensor(format!("{prefix}.mlp.b2"), &[d], false, Init::Zeros),
    }
}

pub fn register_text_tower(
    b: &mut ParamStoreBuilder,
    vocab_size: usize,
    max_len: usize,
    layers: usize,
    d: usize,
    hidden: usize,
) -> TowerLayout {
    let tok_emb = b.tensor("text.tok_emb", &[vocab_size, d], false, Init::Normal(0.02));
    let pos_emb = b.tensor("text.pos_emb", &[max_len, d], false, Init::Normal(0.01));
    let blocks = (0..layers)
        .map(|i| register_block(b, &format!("text.block{i}"), d, hidden))
        .collect();
    TowerLayout {
        kind: TowerKind::Text { tok_emb },
        pos_emb,
        blocks,
        ln_f_g: b.tensor("text.ln_f.g", &[d], false, Init::Ones),
        ln_f_b: b.tensor("text.ln_f.b", &[d], false, Init::Zeros),
        proj: b.tensor("text.proj", &[d, d], true, Init::Normal(1.0 / (d as f64).sqrt())),
    }
}

pub fn register_visual_tower(
    b: &mut ParamStoreBuilder,
    patch_count: usize,
    patch_dim: usize,
    layers: usize,
    d: usize,
    hidden: usize,
) -> TowerLayout {
    let patch_w = b.tensor(
        "vis.patch_emb.w",
        &[patch_dim, d],
        true,
        Init::Normal(1.0 / (patch_dim as f64).sqrt()),
    );
    let patch_b = b.tensor("vis.patch_emb.b", &[d], false, Init::Zeros);
    let cls = b.tensor("vis.cls", &[d], false, Init::Normal(0.02));
    let pos_emb = b.tensor("vis.pos_emb", &[patch_count + 1, d], false, Init::Normal(0.01));
    let blocks = (0..layers)
        .map(|i| register_block(b, &format!("vis.block{i}"), d, hidden))
        .collect();
    TowerLayout {
        kind: TowerKind::Visual {
            patch_w,
            patch_b,
            cls,
        },
        pos_emb,
        blocks,
        ln_f_g: b.tensor("vis.ln_f.g", &[d], false, Init::Ones),
        ln_f_b: b.tensor("vis.ln_f.b", &[d], false, Init::Zeros),
        proj: b.tensor("vis.proj", &[d, d], true, Init::Normal(1.0 / (d as f64).sqrt())),
    }
}

/// Global token feature, GeM-pooled token feature, and their
/// concatenation: the retrieval feature every loss operates on.
#[derive(Debug, Clone)]
pub struct EmbeddingOutputs {
    pub global: Vec<f64>,
    pub pooled: Vec<f64>,
    pub concat: Vec<f64>,
    /// Projected per-token features, `[seq_len, d]`.
    pub token_features: Vec<f64>,
}

impl EmbeddingOutputs {
    fn assemble(global: Vec<f64>, pooled: Vec<f64>, token_features: Vec<f64>) -> Self {
        let mut concat = Vec::with_capacity(global.len() * 2);
        concat.extend_from_slice(&global);
        concat.extend_from_slice(&pooled);
        EmbeddingOutputs {
            global,
            pooled,
            concat,
            token_features,
        }
    }
}

pub struct TowerCache {
    pub t: usize,
    pub x0: Vec<f64>,
    pub mask: Vec<bool>,
    pub blocks: Vec<BlockCache>,
    pub ln_f: LnCache,
    pub f: Vec<f64>,
    pub x_final: Vec<f64>,
    pub gem: GemCache,
    /// Rows pooled by GeM (token positions).
    pub pool_rows: Vec<usize>,
    /// Row holding the global feature (EOT or class token).
    pub global_row: usize,
    pub token_features: Vec<f64>,
    /// Raw pooled-token matrix, for the clamp mask in the GeM backward.
    pub pool_input: Vec<f64>,
    /// Text only: the token ids, for embedding-table scatter.
    pub token_ids: Option<Vec<usize>>,
    /// Visual only: the flattened patch grid, for the patch-embed backward.
    pub patches: Option<Vec<f64>>,
}

fn run_tower(
    store: &ParamStore,
    layout: &TowerLayout,
    x0: Vec<f64>,
    t: usize,
    d: usize,
    heads: usize,
    mask: Vec<bool>,
    global_row: usize,
    pool_rows: Vec<usize>,
    q: f64,
    token_ids: Option<Vec<usize>>,
    patches: Option<Vec<f64>>,
) -> (EmbeddingOutputs, TowerCache) {
    let mut x = x0.clone();
    let mut blocks = Vec::with_capacity(layout.blocks.len());
    for bl in &layout.blocks {
        let (next, cache) = block_fwd(store, bl, x, t, d, heads, &mask);
        blocks.push(cache);
        x = next;
    }
    let x_final = x;
    let (f, ln_f) = layernorm_fwd(&x_final, t, d, store.slice(layout.ln_f_g), store.slice(layout.ln_f_b));
    let token_features = linear_fwd(&f, t, d, d, store.slice(layout.proj), None);

    let global = token_features[global_row * d..(global_row + 1) * d].to_vec();
    let mut pool_input = Vec::with_capacity(pool_rows.len() * d);
    for &r in &pool_rows {
        pool_input.extend_from_slice(&token_features[r * d..(r + 1) * d]);
    }
    let (pooled, gem) = gem_fwd(&pool_input, pool_rows.len(), d, q);

    let outputs = EmbeddingOutputs::assemble(global, pooled, token_features.clone());
    let cache = TowerCache {
        t,
        x0,
        mask,
        blocks,
        ln_f,
        f,
        x_final,
        gem,
        pool_rows,
        global_row,
        token_features,
        pool_input,
        token_ids,
        patches,
    };
    (outputs, cache)
}

/// Backward from gradients on the concat feature down to the embedding
/// inputs; accumulates parameter gradients, including the pooling
/// exponent's when `d_q` is supplied. Returns `d(x0)`.
fn run_tower_bwd(
    store: &ParamStore,
    layout: &TowerLayout,
    cache: &TowerCache,
    d_concat: &[f64],
    d: usize,
    heads: usize,
    q: f64,
    grads: &mut [f64],
    d_q: Option<&mut f64>,
) -> Vec<f64> {
    let t = cache.t;
    let (d_global, d_pooled) = d_concat.split_at(d);

    // Gradient on the projected token features: the global row plus the
    // GeM-pooled rows.
    let mut d_tokens = vec![0.0; t * d];
    d_tokens[cache.global_row * d..(cache.global_row + 1) * d].copy_from_slice(d_global);

    let n_pool = cache.pool_rows.len();
    let mut d_pool_input = vec![0.0; n_pool * d];
    gem_bwd(&cache.gem, &cache.pool_input, d_pooled, q, &mut d_pool_input, d_q);
    for (i, &r) in cache.pool_rows.iter().enumerate() {
        for j in 0..d {
            d_tokens[r * d + j] += d_pool_input[i * d + j];
        }
    }

    // Projection (no bias), final layernorm.
    let mut d_f = vec![0.0; t * d];
    {
        let [dproj] = store.views_mut(grads, [layout.proj]);
        linear_bwd(
            &cache.f,
            &d_tokens,
            store.slice(layout.proj),
            t,
            d,
            d,
            Some(&mut d_f),
            dproj,
            None,
        );
    }
    let mut d_x = vec![0.0; t * d];
    {
        let [dg, db] = store.views_mut(grads, [layout.ln_f_g, layout.ln_f_b]);
        layernorm_bwd(&d_f, &cache.ln_f, store.slice(layout.ln_f_g), t, d, &mut d_x, dg, db);
    }

    for (bl, bc) in layout.blocks.iter().zip(&cache.blocks).rev() {
        d_x = block_bwd(store, bl, bc, &d_x, t, d, heads, grads);
    }
    d_x
}

pub fn text_forward(
    store: &ParamStore,
    layout: &TowerLayout,
    tokens: &TokenizedText,
    d: usize,
    heads: usize,
    q: f64,
) -> (EmbeddingOutputs, TowerCache) {
    let TowerKind::Text { tok_emb } = layout.kind else {
        panic!("text_forward on a visual tower");
    };
    let t = tokens.ids.len();
    let emb = store.slice(tok_emb);
    let pos = store.slice(layout.pos_emb);
    let mut x0 = vec![0.0; t * d];
    let mut mask = vec![false; t];
    for (i, &id) in tokens.ids.iter().enumerate() {
        mask[i] = id != PAD;
        for j in 0..d {
            x0[i * d + j] = emb[id * d + j] + pos[i * d + j];
        }
    }
    // Pool over the actual word tokens, excluding SOT/EOT/padding.
    let pool_rows: Vec<usize> = (1..=tokens.n_words).collect();
    run_tower(
        store,
        layout,
        x0,
        t,
        d,
        heads,
        mask,
        tokens.eot_pos(),
        pool_rows,
        q,
        Some(tokens.ids.clone()),
        None,
    )
}

pub fn text_backward(
    store: &ParamStore,
    layout: &TowerLayout,
    cache: &TowerCache,
    d_concat: &[f64],
    d: usize,
    heads: usize,
    q: f64,
    grads: &mut [f64],
    d_q: Option<&mut f64>,
) {
    let TowerKind::Text { tok_emb } = layout.kind else {
        panic!("text_backward on a visual tower");
    };
    let d_x0 = run_tower_bwd(store, layout, cache, d_concat, d, heads, q, grads, d_q);
    let ids = cache.token_ids.as_ref().expect("text cache has token ids");
    let [demb, dpos] = store.views_mut(grads, [tok_emb, layout.pos_emb]);
    for (i, &id) in ids.iter().enumerate() {
        for j in 0..d {
            demb[id * d + j] += d_x0[i * d + j];
            dpos[i * d + j] += d_x0[i * d + j];
        }
    }
}

pub fn visual_forward(
    store: &ParamStore,
    layout: &TowerLayout,
    patches: &[f64],
    patch_count: usize,
    patch_dim: usize,
    d: usize,
    heads: usize,
    q: f64,
) -> (EmbeddingOutputs, TowerCache) {
    let TowerKind::Visual { patch_w, patch_b, cls } = layout.kind else {
        panic!("visual_forward on a text tower");
    };
    let t = patch_count + 1;
    let embedded = linear_fwd(
        patches,
        patch_count,
        patch_dim,
        d,
        store.slice(patch_w),
        Some(store.slice(patch_b)),
    );
    let pos = store.slice(layout.pos_emb);
    let cls_tok = store.slice(cls);
    let mut x0 = vec![0.0; t * d];
    for j in 0..d {
        x0[j] = cls_tok[j] + pos[j];
    }
    for i in 0..patch_count {
        for j in 0..d {
            x0[(i + 1) * d + j] = embedded[i * d + j] + pos[(i + 1) * d + j];
        }
    }
    let pool_rows: Vec<usize> = (1..t).collect();
    run_tower(
        store,
        layout,
        x0,
        t,
        d,
        heads,
        vec![true; t],
        0,
        pool_rows,
        q,
        None,
        Some(patches.to_vec()),
    )
}

pub fn visual_backward(
    store: &ParamStore,
    layout: &TowerLayout,
    cache: &TowerCache,
    d_concat: &[f64],
    patch_count: usize,
    patch_dim: usize,
    d: usize,
    heads: usize,
    q: f64,
    grads: &mut [f64],
    d_q: Option<&mut f64>,
) {
    let TowerKind::Visual { patch_w, patch_b, cls } = layout.kind else {
        panic!("visual_backward on a text tower");
    };
    let d_x0 = run_tower_bwd(store, layout, cache, d_concat, d, heads, q, grads, d_q);
    let patches = cache.patches.as_ref().expect("visual cache has patches");
    {
        let [dcls, dpos] = store.views_mut(grads, [cls, layout.pos_emb]);
        for j in 0..d {
            dcls[j] += d_x0[j];
        }
        for (dp, dx) in dpos.iter_mut().zip(&d_x0) {
            *dp += dx;
        }
    }
    let d_embedded = &d_x0[d..];
    let [dw, db] = store.views_mut(grads, [patch_w, patch_b]);
    linear_bwd(
        patches,
        d_embedded,
        store.slice(patch_w),
        patch_count,
        patch_dim,
        d,
        None,
        dw,
        Some(db),
    );
}
