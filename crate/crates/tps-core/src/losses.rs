//! The training objective: normalized-softmax classification, pairwise
//! alignment, integrity ranking over MIDs, and the attribute prompt loss,
//! combined as `L_cls + L_align + lambda0 * L_int + lambda1 * L_pmt`.
//!
//! Every loss takes plain feature matrices and accumulates analytic
//! gradients with respect to them into a [`BatchGrads`]; the trainer
//! chains those into the encoder backward passes. The prompt loss is
//! deliberately one-sided: prompt text features enter as constants and
//! only the image features receive gradient.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Scales, thresholds and mixing weights of the objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    /// Logit scale of the normalized softmax.
    pub s: f64,
    /// Positive-pair similarity threshold.
    pub alpha: f64,
    /// Negative-pair similarity threshold.
    pub beta: f64,
    /// MID-pair similarity threshold.
    pub gamma: f64,
    pub tau_p: f64,
    pub tau_n: f64,
    pub tau_mid: f64,
    /// Weight of the integrity ranking loss.
    pub lambda0: f64,
    /// Weight of the prompt loss.
    pub lambda1: f64,
    /// Prompt-similarity threshold that promotes a cross-identity prompt
    /// pair to positive.
    pub th: f64,
    pub n_classes: usize,
    pub align_mode: AlignMode,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            s: 30.0,
            alpha: 0.6,
            beta: 0.4,
            gamma: 0.6,
            tau_p: 10.0,
            tau_n: 40.0,
            tau_mid: 15.0,
            lambda0: 1e-4,
            lambda1: 1e-2,
            th: 0.98,
            n_classes: 0,
            align_mode: AlignMode::AllPairs,
        }
    }
}

/// How the alignment loss aggregates pairs. The batch-wide all-pairs sum
/// is the default; the alternatives restrict positives to the diagonal
/// pair or keep only the hardest positive and negative per anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    AllPairs,
    DiagonalOnly,
    Hardest,
}

/// Identity classifier rows for both modalities, L2-renormalized on every
/// forward.
pub struct ClassifierWeights<'a> {
    pub w_v: &'a [f64],
    pub w_t: &'a [f64],
    pub n_classes: usize,
    pub dim: usize,
}

/// One prompt's text feature plus the template group it may be compared
/// within.
#[derive(Debug, Clone)]
pub struct PromptFeature {
    pub feature: Vec<f64>,
    pub group_key: String,
}

/// Features of one training batch: image and caption features, `K_m` MID
/// features per pair, `K_p` prompt features per pair, identity labels.
#[derive(Debug, Clone, Default)]
pub struct BatchFeatures {
    pub v: Vec<Vec<f64>>,
    pub t: Vec<Vec<f64>>,
    pub t_mid: Vec<Vec<Vec<f64>>>,
    pub t_pmt: Vec<Vec<PromptFeature>>,
    pub labels: Vec<usize>,
}

impl BatchFeatures {
    pub fn batch_size(&self) -> usize {
        self.v.len()
    }
}

/// Gradients with respect to every differentiated input of the losses.
/// Prompt features never appear here: their gradient is identically zero.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub v: Vec<Vec<f64>>,
    pub t: Vec<Vec<f64>>,
    pub t_mid: Vec<Vec<Vec<f64>>>,
    pub w_v: Vec<f64>,
    pub w_t: Vec<f64>,
}

impl BatchGrads {
    pub fn zeros_for(batch: &BatchFeatures, n_classes: usize, dim: usize) -> Self {
        BatchGrads {
            v: batch.v.iter().map(|x| vec![0.0; x.len()]).collect(),
            t: batch.t.iter().map(|x| vec![0.0; x.len()]).collect(),
            t_mid: batch
                .t_mid
                .iter()
                .map(|ks| ks.iter().map(|x| vec![0.0; x.len()]).collect())
                .collect(),
            w_v: vec![0.0; n_classes * dim],
            w_t: vec![0.0; n_classes * dim],
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; zero vectors are an error.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::Argument(
            "cosine_sim of a zero vector".to_string(),
        ));
    }
    Ok(dot(a, b) / (na * nb))
}

fn cos_unchecked(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Accumulate `coeff * d cos(a, b) / d a` into `da` (and symmetrically
/// into `db` when given).
fn add_cos_grad(a: &[f64], b: &[f64], coeff: f64, da: &mut [f64], db: Option<&mut [f64]>) {
    let na = norm(a);
    let nb = norm(b);
    let c = dot(a, b) / (na * nb);
    for j in 0..a.len() {
        da[j] += coeff * (b[j] / (na * nb) - c * a[j] / (na * na));
    }
    if let Some(db) = db {
        for j in 0..b.len() {
            db[j] += coeff * (a[j] / (na * nb) - c * b[j] / (nb * nb));
        }
    }
}

/// Numerically stable `log(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{-tau (S - threshold)})` and its derivative w.r.t. `S`.
fn pull_term(s_val: f64, tau: f64, threshold: f64) -> (f64, f64) {
    let x = -tau * (s_val - threshold);
    (softplus(x), -tau * sigmoid(x))
}

/// `log(1 + e^{tau (S - threshold)})` and its derivative w.r.t. `S`.
fn push_term(s_val: f64, tau: f64, threshold: f64) -> (f64, f64) {
    let x = tau * (s_val - threshold);
    (softplus(x), tau * sigmoid(x))
}

/// Cross entropy of one feature against L2-renormalized classifier rows
/// with scaled cosine logits. Gradients accumulate with factor `weight`.
pub(crate) fn normalized_ce(
    x: &[f64],
    w: &[f64],
    n_classes: usize,
    dim: usize,
    y: usize,
    s: f64,
    weight: f64,
    dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
) -> f64 {
    let xn = norm(x);
    let x_hat: Vec<f64> = x.iter().map(|v| v / xn).collect();
    let mut logits = vec![0.0; n_classes];
    let mut w_norms = vec![0.0; n_classes];
    for c in 0..n_classes {
        let row = &w[c * dim..(c + 1) * dim];
        let wn = norm(row);
        w_norms[c] = wn;
        logits[c] = s * dot(row, &x_hat) / wn;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[y];

    if dx.is_some() || dw.is_some() {
        // d(loss)/d(logit_c) = softmax_c - [c == y]
        let mut dxhat = vec![0.0; dim];
        for c in 0..n_classes {
            let p = (logits[c] - lse).exp();
            let dz = weight * s * (p - f64::from(u8::from(c == y)));
            let row = &w[c * dim..(c + 1) * dim];
            let wn = w_norms[c];
            if dx.is_some() {
                for j in 0..dim {
                    dxhat[j] += dz * row[j] / wn;
                }
            }
            if let Some(dw) = dw.as_deref_mut() {
                // Through the row normalization.
                let w_hat: Vec<f64> = row.iter().map(|v| v / wn).collect();
                let inner = dot(&w_hat, &x_hat);
                for j in 0..dim {
                    dw[c * dim + j] += dz * (x_hat[j] - w_hat[j] * inner) / wn;
                }
            }
        }
        if let Some(dx) = dx {
            // Through the feature normalization.
            let inner = dot(&x_hat, &dxhat);
            for j in 0..dim {
                dx[j] += (dxhat[j] - x_hat[j] * inner) / xn;
            }
        }
    }
    loss
}

/// Normalized-softmax classification over visual features, text features
/// and every MID feature (all MIDs carry their source pair's label).
pub fn loss_cls(
    batch: &BatchFeatures,
    w: &ClassifierWeights<'_>,
    p: &LossParams,
    weight: f64,
    mut grads: Option<&mut BatchGrads>,
) -> Result<f64> {
    let b = batch.batch_size();
    for &y in &batch.labels {
        if y >= w.n_classes {
            return Err(CoreError::Argument(format!(
                "label {y} out of range for {} classes",
                w.n_classes
            )));
        }
    }
    let mut acc = 0.0;
    for i in 0..b {
        let (dx, dw) = match grads.as_deref_mut() {
            Some(g) => (Some(g.v[i].as_mut_slice()), Some(g.w_v.as_mut_slice())),
            None => (None, None),
        };
        acc += normalized_ce(
            &batch.v[i],
            w.w_v,
            w.n_classes,
            w.dim,
            batch.labels[i],
            p.s,
            weight,
            dx,
            dw,
        );
    }
    for i in 0..b {
        let (dx, dw) = match grads.as_deref_mut() {
            Some(g) => (Some(g.t[i].as_mut_slice()), Some(g.w_t.as_mut_slice())),
            None => (None, None),
        };
        acc += normalized_ce(
            &batch.t[i],
            w.w_t,
            w.n_classes,
            w.dim,
            batch.labels[i],
            p.s,
            weight,
            dx,
            dw,
        );
    }
    for i in 0..b {
        for k in 0..batch.t_mid[i].len() {
            let (dx, dw) = match grads.as_deref_mut() {
                Some(g) => (
                    Some(g.t_mid[i][k].as_mut_slice()),
                    Some(g.w_t.as_mut_slice()),
                ),
                None => (None, None),
            };
            acc += normalized_ce(
                &batch.t_mid[i][k],
                w.w_t,
                w.n_classes,
                w.dim,
                batch.labels[i],
                p.s,
                weight,
                dx,
                dw,
            );
        }
    }
    Ok(acc)
}

/// Pairwise alignment: pull every intra-identity image-text pair above
/// `alpha`, push every inter-identity pair below `beta`, and pull each
/// image's own MID features above `gamma`.
pub fn loss_align(
    batch: &BatchFeatures,
    p: &LossParams,
    weight: f64,
    mut grads: Option<&mut BatchGrads>,
) -> f64 {
    let b = batch.batch_size();
    let mut acc = 0.0;
    match p.align_mode {
        AlignMode::AllPairs | AlignMode::DiagonalOnly => {
            for i in 0..b {
                for j in 0..b {
                    let same = batch.labels[j] == batch.labels[i];
                    let positive = match p.align_mode {
                        AlignMode::AllPairs => same,
                        _ => i == j,
                    };
                    let s_ij = cos_unchecked(&batch.v[i], &batch.t[j]);
                    let (term, dterm) = if positive {
                        pull_term(s_ij, p.tau_p, p.alpha)
                    } else if !same {
                        push_term(s_ij, p.tau_n, p.beta)
                    } else {
                        // Diagonal-only mode: off-diagonal intra-identity
                        // pairs are neither pulled nor pushed.
                        continue;
                    };
                    acc += term;
                    if let Some(g) = grads.as_deref_mut() {
                        let (dv, dt) = (&mut g.v[i], &mut g.t[j]);
                        add_cos_grad(
                            &batch.v[i],
                            &batch.t[j],
                            weight * dterm,
                            dv,
                            Some(dt),
                        );
                    }
                }
            }
        }
        AlignMode::Hardest => {
            // Per anchor, only the least similar positive and the most
            // similar negative contribute, in both retrieval directions.
            for i in 0..b {
                acc += hardest_terms(batch, p, weight, i, true, grads.as_deref_mut());
            }
            for j in 0..b {
                acc += hardest_terms(batch, p, weight, j, false, grads.as_deref_mut());
            }
        }
    }
    for i in 0..b {
        for k in 0..batch.t_mid[i].len() {
            let s_ik = cos_unchecked(&batch.v[i], &batch.t_mid[i][k]);
            let (term, dterm) = pull_term(s_ik, p.tau_mid, p.gamma);
            acc += term;
            if let Some(g) = grads.as_deref_mut() {
                let (dv, dm) = (&mut g.v[i], &mut g.t_mid[i][k]);
                add_cos_grad(
                    &batch.v[i],
                    &batch.t_mid[i][k],
                    weight * dterm,
                    dv,
                    Some(dm),
                );
            }
        }
    }
    acc
}

fn hardest_terms(
    batch: &BatchFeatures,
    p: &LossParams,
    weight: f64,
    anchor: usize,
    image_anchor: bool,
    mut grads: Option<&mut BatchGrads>,
) -> f64 {
    let b = batch.batch_size();
    let sim = |other: usize| {
        if image_anchor {
            cos_unchecked(&batch.v[anchor], &batch.t[other])
        } else {
            cos_unchecked(&batch.v[other], &batch.t[anchor])
        }
    };
    let mut hard_pos: Option<(usize, f64)> = None;
    let mut hard_neg: Option<(usize, f64)> = None;
    for other in 0..b {
        let s_val = sim(other);
        if batch.labels[other] == batch.labels[anchor] {
            if hard_pos.is_none_or(|(_, best)| s_val < best) {
                hard_pos = Some((other, s_val));
            }
        } else if hard_neg.is_none_or(|(_, best)| s_val > best) {
            hard_neg = Some((other, s_val));
        }
    }
    let mut acc = 0.0;
    let mut apply = |other: usize, term: f64, dterm: f64, grads: Option<&mut BatchGrads>| {
        acc += term;
        if let Some(g) = grads {
            let (vi, tj) = if image_anchor {
                (anchor, other)
            } else {
                (other, anchor)
            };
            let (dv, dt) = (&mut g.v[vi], &mut g.t[tj]);
            add_cos_grad(&batch.v[vi], &batch.t[tj], weight * dterm, dv, Some(dt));
        }
    };
    if let Some((j, s_val)) = hard_pos {
        let (term, dterm) = pull_term(s_val, p.tau_p, p.alpha);
        apply(j, term, dterm, grads.as_deref_mut());
    }
    if let Some((j, s_val)) = hard_neg {
        let (term, dterm) = push_term(s_val, p.tau_n, p.beta);
        apply(j, term, dterm, grads);
    }
    acc
}

/// Integrity ranking: an incomplete description may not be more similar to
/// its image than the complete one.
pub fn loss_int(
    batch: &BatchFeatures,
    weight: f64,
    mut grads: Option<&mut BatchGrads>,
) -> f64 {
    let b = batch.batch_size();
    let mut acc = 0.0;
    for i in 0..b {
        for k in 0..batch.t_mid[i].len() {
            let s_mid = cos_unchecked(&batch.v[i], &batch.t_mid[i][k]);
            let s_full = cos_unchecked(&batch.v[i], &batch.t[i]);
            let diff = s_mid - s_full;
            if diff > 0.0 {
                acc += diff;
                if let Some(g) = grads.as_deref_mut() {
                    {
                        let (dv, dm) = (&mut g.v[i], &mut g.t_mid[i][k]);
                        add_cos_grad(&batch.v[i], &batch.t_mid[i][k], weight, dv, Some(dm));
                    }
                    let (dv, dt) = (&mut g.v[i], &mut g.t[i]);
                    add_cos_grad(&batch.v[i], &batch.t[i], -weight, dv, Some(dt));
                }
            }
        }
    }
    acc
}

/// Positive / negative prompt indices for one anchor prompt, as positions
/// `(j, l)` into the batch's prompt grid.
pub type PromptSets = Vec<Vec<(Vec<(usize, usize)>, Vec<(usize, usize)>)>>;

/// Partition same-group prompts into positives and negatives: same
/// identity is always positive, and a cross-identity prompt pair whose
/// text features are near-identical (cosine >= th) is promoted to
/// positive. Similarities here never carry gradient.
pub fn build_prompt_sets(batch: &BatchFeatures, p: &LossParams) -> PromptSets {
    let b = batch.batch_size();
    let mut sets = Vec::with_capacity(b);
    for i in 0..b {
        let mut per_anchor = Vec::with_capacity(batch.t_pmt[i].len());
        for k in 0..batch.t_pmt[i].len() {
            let anchor = &batch.t_pmt[i][k];
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for j in 0..b {
                for (l, cand) in batch.t_pmt[j].iter().enumerate() {
                    if cand.group_key != anchor.group_key {
                        continue;
                    }
                    if batch.labels[j] == batch.labels[i]
                        || cos_unchecked(&cand.feature, &anchor.feature) >= p.th
                    {
                        pos.push((j, l));
                    } else {
                        neg.push((j, l));
                    }
                }
            }
            per_anchor.push((pos, neg));
        }
        sets.push(per_anchor);
    }
    sets
}

/// Dynamic attribute prompt loss. Gradient reaches the image features
/// only; prompt text features are constants here.
pub fn loss_pmt(
    batch: &BatchFeatures,
    sets: &PromptSets,
    p: &LossParams,
    weight: f64,
    mut grads: Option<&mut BatchGrads>,
) -> f64 {
    let b = batch.batch_size();
    let mut acc = 0.0;
    for i in 0..b {
        for (pos, neg) in &sets[i] {
            for &(j, l) in pos {
                let feat = &batch.t_pmt[j][l].feature;
                let s_val = cos_unchecked(&batch.v[i], feat);
                let (term, dterm) = pull_term(s_val, p.tau_p, p.alpha);
                acc += term;
                if let Some(g) = grads.as_deref_mut() {
                    add_cos_grad(&batch.v[i], feat, weight * dterm, &mut g.v[i], None);
                }
            }
            for &(j, l) in neg {
                let feat = &batch.t_pmt[j][l].feature;
                let s_val = cos_unchecked(&batch.v[i], feat);
                let (term, dterm) = push_term(s_val, p.tau_n, p.beta);
                acc += term;
                if let Some(g) = grads.as_deref_mut() {
                    add_cos_grad(&batch.v[i], feat, weight * dterm, &mut g.v[i], None);
                }
            }
        }
    }
    acc
}

/// Per-component values of one batch's objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub align: f64,
    pub int: f64,
    pub pmt: f64,
    pub total: f64,
}

/// Combine raw component values into the weighted total.
pub fn total_from_components(cls: f64, align: f64, int: f64, pmt: f64, p: &LossParams) -> f64 {
    cls + align + p.lambda0 * int + p.lambda1 * pmt
}

/// All four losses plus the weighted total; gradients (already weighted by
/// the lambdas) accumulate into `grads` when given.
pub fn loss_total(
    batch: &BatchFeatures,
    w: &ClassifierWeights<'_>,
    p: &LossParams,
    mut grads: Option<&mut BatchGrads>,
) -> Result<LossBreakdown> {
    let cls = loss_cls(batch, w, p, 1.0, grads.as_deref_mut())?;
    let align = loss_align(batch, p, 1.0, grads.as_deref_mut());
    let int = loss_int(batch, p.lambda0, grads.as_deref_mut());
    let sets = build_prompt_sets(batch, p);
    let pmt = loss_pmt(batch, &sets, p, p.lambda1, grads);
    Ok(LossBreakdown {
        cls,
        align,
        int,
        pmt,
        total: total_from_components(cls, align, int, pmt, p),
    })
}
