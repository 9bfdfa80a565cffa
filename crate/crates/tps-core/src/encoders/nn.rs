//! Transformer building blocks with hand-written backward passes.
//!
//! Everything operates on row-major `[seq_len, dim]` slices of `f64` for a
//! single sample; batching happens one level up where samples run in
//! parallel. Each forward returns the caches its backward needs, and every
//! backward accumulates into caller-provided buffers so per-sample
//! gradients can be reduced deterministically.

use crate::encoders::params::ParamStore;

const LN_EPS: f64 = 1e-5;
const MASKED_SCORE: f64 = -1e30;

pub fn linear_fwd(
    x: &[f64],
    t: usize,
    din: usize,
    dout: usize,
    w: &[f64],
    b: Option<&[f64]>,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), t * din);
    debug_assert_eq!(w.len(), din * dout);
    let mut y = vec![0.0; t * dout];
    for r in 0..t {
        let xr = &x[r * din..(r + 1) * din];
        let yr = &mut y[r * dout..(r + 1) * dout];
        if let Some(b) = b {
            yr.copy_from_slice(b);
        }
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * dout..(i + 1) * dout];
            for (yj, wj) in yr.iter_mut().zip(wrow) {
                *yj += xi * wj;
            }
        }
    }
    y
}

/// Backward of `linear_fwd`. `dx`, `dw`, `db` are accumulated into.
pub fn linear_bwd(
    x: &[f64],
    dy: &[f64],
    w: &[f64],
    t: usize,
    din: usize,
    dout: usize,
    mut dx: Option<&mut [f64]>,
    dw: &mut [f64],
    mut db: Option<&mut [f64]>,
) {
    for r in 0..t {
        let xr = &x[r * din..(r + 1) * din];
        let dyr = &dy[r * dout..(r + 1) * dout];
        if let Some(db) = db.as_deref_mut() {
            for (dbj, dyj) in db.iter_mut().zip(dyr) {
                *dbj += dyj;
            }
        }
        for i in 0..din {
            let wrow = &w[i * dout..(i + 1) * dout];
            let dwrow = &mut dw[i * dout..(i + 1) * dout];
            let xi = xr[i];
            let mut acc = 0.0;
            for j in 0..dout {
                dwrow[j] += xi * dyr[j];
                acc += wrow[j] * dyr[j];
            }
            if let Some(dx) = dx.as_deref_mut() {
                dx[r * din + i] += acc;
            }
        }
    }
}

pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layernorm_fwd(x: &[f64], t: usize, d: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; t * d];
    let mut xhat = vec![0.0; t * d];
    let mut rstd = vec![0.0; t];
    for r in 0..t {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (xr[j] - mean) * rs;
            xhat[r * d + j] = xh;
            y[r * d + j] = g[j] * xh + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn layernorm_bwd(
    dy: &[f64],
    cache: &LnCache,
    g: &[f64],
    t: usize,
    d: usize,
    dx: &mut [f64],
    dg: &mut [f64],
    db: &mut [f64],
) {
    for r in 0..t {
        let dyr = &dy[r * d..(r + 1) * d];
        let xhr = &cache.xhat[r * d..(r + 1) * d];
        let rs = cache.rstd[r];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhr[j];
            dg[j] += dyr[j] * xhr[j];
            db[j] += dyr[j];
        }
        let mean_dxhat = sum_dxhat / d as f64;
        let mean_dxhat_xhat = sum_dxhat_xhat / d as f64;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            dx[r * d + j] += rs * (dxh - mean_dxhat - xhr[j] * mean_dxhat_xhat);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Multi-head attention caches: projected q/k/v, per-head attention
/// probabilities, and the pre-output-projection context.
pub struct AttnCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `[heads, t, t]`, query-major rows.
    pub probs: Vec<f64>,
    pub ctx: Vec<f64>,
}

/// Scaled dot-product attention over already-projected q/k/v. Key
/// positions with `mask[s] == false` receive no attention.
fn attention_core(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    t: usize,
    d: usize,
    heads: usize,
    mask: &[bool],
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * t * t];
    let mut ctx = vec![0.0; t * d];
    let mut row = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        for tq in 0..t {
            let qrow = &q[tq * d + off..tq * d + off + dh];
            let mut max = f64::NEG_INFINITY;
            for ts in 0..t {
                let krow = &k[ts * d + off..ts * d + off + dh];
                let mut s: f64 = qrow.iter().zip(krow).map(|(a, b)| a * b).sum();
                s *= scale;
                if !mask[ts] {
                    s = MASKED_SCORE;
                }
                row[ts] = s;
                if s > max {
                    max = s;
                }
            }
            let mut denom = 0.0;
            for ts in 0..t {
                let e = (row[ts] - max).exp();
                row[ts] = e;
                denom += e;
            }
            let p = &mut probs[(h * t + tq) * t..(h * t + tq + 1) * t];
            for ts in 0..t {
                p[ts] = row[ts] / denom;
            }
            let crow = &mut ctx[tq * d + off..tq * d + off + dh];
            for ts in 0..t {
                let pv = p[ts];
                if pv == 0.0 {
                    continue;
                }
                let vrow = &v[ts * d + off..ts * d + off + dh];
                for (c, vv) in crow.iter_mut().zip(vrow) {
                    *c += pv * vv;
                }
            }
        }
    }
    (ctx, probs)
}

fn attention_core_bwd(
    cache: &AttnCache,
    d_ctx: &[f64],
    t: usize,
    d: usize,
    heads: usize,
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        for tq in 0..t {
            let dcrow = &d_ctx[tq * d + off..tq * d + off + dh];
            let p = &cache.probs[(h * t + tq) * t..(h * t + tq + 1) * t];
            let mut dot = 0.0;
            for ts in 0..t {
                let vrow = &cache.v[ts * d + off..ts * d + off + dh];
                let g: f64 = dcrow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                dp[ts] = g;
                dot += g * p[ts];
                // dv through ctx = sum_s p_s * v_s
                if p[ts] != 0.0 {
                    let dvrow = &mut dv[ts * d + off..ts * d + off + dh];
                    for (dvv, dcv) in dvrow.iter_mut().zip(dcrow) {
                        *dvv += p[ts] * dcv;
                    }
                }
            }
            let qrow = &cache.q[tq * d + off..tq * d + off + dh];
            for ts in 0..t {
                let ds = p[ts] * (dp[ts] - dot);
                if ds == 0.0 {
                    continue;
                }
                let krow = &cache.k[ts * d + off..ts * d + off + dh];
                let dqrow = &mut dq[tq * d + off..tq * d + off + dh];
                for j in 0..dh {
                    dqrow[j] += ds * krow[j] * scale;
                    dk[ts * d + off + j] += ds * qrow[j] * scale;
                }
            }
        }
    }
}

/// Tensor ids of one pre-norm transformer block.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BlockLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl BlockLayout {
    pub fn tensor_ids(&self) -> [usize; 16] {
        [
            self.ln1_g, self.ln1_b, self.wq, self.bq, self.wk, self.bk, self.wv, self.bv,
            self.wo, self.bo, self.ln2_g, self.ln2_b, self.w1, self.b1, self.w2, self.b2,
        ]
    }
}

pub struct BlockCache {
    pub x_in: Vec<f64>,
    pub ln1: LnCache,
    pub a: Vec<f64>,
    pub attn: AttnCache,
    pub x1: Vec<f64>,
    pub ln2: LnCache,
    pub m_in: Vec<f64>,
    pub h_pre: Vec<f64>,
    pub h_act: Vec<f64>,
}

/// Pre-norm block: `x + MHA(LN(x))`, then `.. + MLP(LN(..))`.
pub fn block_fwd(
    store: &ParamStore,
    l: &BlockLayout,
    x: Vec<f64>,
    t: usize,
    d: usize,
    heads: usize,
    mask: &[bool],
) -> (Vec<f64>, BlockCache) {
    let hidden = store.def(l.b1).shape[0];
    let (a, ln1) = layernorm_fwd(&x, t, d, store.slice(l.ln1_g), store.slice(l.ln1_b));
    let q = linear_fwd(&a, t, d, d, store.slice(l.wq), Some(store.slice(l.bq)));
    let k = linear_fwd(&a, t, d, d, store.slice(l.wk), Some(store.slice(l.bk)));
    let v = linear_fwd(&a, t, d, d, store.slice(l.wv), Some(store.slice(l.bv)));
    let (ctx, probs) = attention_core(&q, &k, &v, t, d, heads, mask);
    let att = linear_fwd(&ctx, t, d, d, store.slice(l.wo), Some(store.slice(l.bo)));

    let mut x1 = x.clone();
    for (x1v, av) in x1.iter_mut().zip(&att) {
        *x1v += av;
    }

    let (m_in, ln2) = layernorm_fwd(&x1, t, d, store.slice(l.ln2_g), store.slice(l.ln2_b));
    let h_pre = linear_fwd(&m_in, t, d, hidden, store.slice(l.w1), Some(store.slice(l.b1)));
    let h_act: Vec<f64> = h_pre.iter().map(|&v| gelu(v)).collect();
    let m = linear_fwd(&h_act, t, hidden, d, store.slice(l.w2), Some(store.slice(l.b2)));

    let mut x2 = x1.clone();
    for (x2v, mv) in x2.iter_mut().zip(&m) {
        *x2v += mv;
    }

    (
        x2,
        BlockCache {
            x_in: x,
            ln1,
            a,
            attn: AttnCache { q, k, v, probs, ctx },
            x1,
            ln2,
            m_in,
            h_pre,
            h_act,
        },
    )
}

/// Backward of [`block_fwd`]; returns gradient w.r.t. the block input and
/// accumulates parameter gradients into `grads`.
pub fn block_bwd(
    store: &ParamStore,
    l: &BlockLayout,
    cache: &BlockCache,
    d_x2: &[f64],
    t: usize,
    d: usize,
    heads: usize,
    grads: &mut [f64],
) -> Vec<f64> {
    let hidden = store.def(l.b1).shape[0];
    let [dln1_g, dln1_b, dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo, dln2_g, dln2_b, dw1, db1, dw2, db2] =
        store.views_mut(grads, l.tensor_ids());

    // MLP path: x2 = x1 + W2 gelu(W1 ln2(x1)).
    let mut d_h_act = vec![0.0; t * hidden];
    linear_bwd(
        &cache.h_act,
        d_x2,
        store.slice(l.w2),
        t,
        hidden,
        d,
        Some(&mut d_h_act),
        dw2,
        Some(db2),
    );
    let mut d_h_pre = d_h_act;
    for (g, &x) in d_h_pre.iter_mut().zip(&cache.h_pre) {
        *g *= gelu_grad(x);
    }
    let mut d_m_in = vec![0.0; t * d];
    linear_bwd(
        &cache.m_in,
        &d_h_pre,
        store.slice(l.w1),
        t,
        d,
        hidden,
        Some(&mut d_m_in),
        dw1,
        Some(db1),
    );
    let mut d_x1 = d_x2.to_vec();
    layernorm_bwd(
        &d_m_in,
        &cache.ln2,
        store.slice(l.ln2_g),
        t,
        d,
        &mut d_x1,
        dln2_g,
        dln2_b,
    );

    // Attention path: x1 = x + Wo ctx.
    let mut d_ctx = vec![0.0; t * d];
    linear_bwd(
        &cache.attn.ctx,
        &d_x1,
        store.slice(l.wo),
        t,
        d,
        d,
        Some(&mut d_ctx),
        dwo,
        Some(dbo),
    );
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    attention_core_bwd(&cache.attn, &d_ctx, t, d, heads, &mut dq, &mut dk, &mut dv);

    let mut d_a = vec![0.0; t * d];
    linear_bwd(&cache.a, &dq, store.slice(l.wq), t, d, d, Some(&mut d_a), dwq, Some(dbq));
    linear_bwd(&cache.a, &dk, store.slice(l.wk), t, d, d, Some(&mut d_a), dwk, Some(dbk));
    linear_bwd(&cache.a, &dv, store.slice(l.wv), t, d, d, Some(&mut d_a), dwv, Some(dbv));

    let mut d_x = d_x1;
    layernorm_bwd(
        &d_a,
        &cache.ln1,
        store.slice(l.ln1_g),
        t,
        d,
        &mut d_x,
        dln1_g,
        dln1_b,
    );
    d_x
}
