//! Forward pass and reverse-mode gradients of the hypernetwork.
//!
//! Token layout for a support set of `p` pairs and `K` readout tokens: rows
//! `0..p` are the projected `[x_i; beta_i]` pairs, rows `p..p+K` the learnable
//! readout tokens. There is no positional information anywhere, so the emitted
//! weights do not depend on the order of the support pairs.
//!
//! Each layer is pre-norm: `h += MHA(LN(h))`, then `h += SwiGLU(LN(h))`. The
//! emitted weights are `head(mean_k LN_final(h[p + k]))`.

use super::config::ModelConfig;
use super::params::{LayerOffsets, ModelParams};
use crate::data::SupportSet;
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar};

const LN_EPS: f64 = 1e-5;

/// Multiplier applied to `q . k` for a context of `tokens` attended keys.
pub fn attention_scale(cfg: &ModelConfig, tokens: usize) -> f64 {
    let base = 1.0 / (cfg.head_dim() as f64).sqrt();
    if cfg.logit_scaling {
        (tokens as f64).ln() * base
    } else {
        base
    }
}

/// Activations kept for the backward pass of one layer.
pub(crate) struct LayerCache<T> {
    ln1_xhat: Vec<T>,
    ln1_rstd: Vec<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[heads x n x n]` attention probabilities.
    pub(crate) probs: Vec<T>,
    ctx: Vec<T>,
    ln2_xhat: Vec<T>,
    ln2_rstd: Vec<T>,
    b: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
    m: Vec<T>,
}

impl<T: Scalar> LayerCache<T> {
    fn new(n: usize, cfg: &ModelConfig) -> Self {
        let (d, f, h) = (cfg.d_model, cfg.d_ff, cfg.heads);
        let z = |len| vec![T::ZERO; len];
        LayerCache {
            ln1_xhat: z(n * d),
            ln1_rstd: z(n),
            a: z(n * d),
            q: z(n * d),
            k: z(n * d),
            v: z(n * d),
            probs: z(h * n * n),
            ctx: z(n * d),
            ln2_xhat: z(n * d),
            ln2_rstd: z(n),
            b: z(n * d),
            u: z(n * f),
            g: z(n * f),
            m: z(n * f),
        }
    }
}

/// Everything the backward pass needs from one forward pass.
pub(crate) struct ForwardCache<T> {
    n: usize,
    p: usize,
    feats: Vec<T>,
    layers: Vec<LayerCache<T>>,
    final_xhat: Vec<T>,
    final_rstd: Vec<T>,
    pooled: Vec<T>,
}

fn check_support<T: Scalar>(params: &ModelParams<T>, support: &SupportSet) -> Result<()> {
    let e = params.config().embed_dim;
    if support.dim() != e {
        return Err(Error::Shape(format!(
            "support embeddings have dimension {} but the model expects {e}",
            support.dim()
        )));
    }
    if support.is_empty() {
        return Err(Error::Shape("support set is empty".into()));
    }
    Ok(())
}

/// `[p x (E+1)]` rows `[x_i; beta_i]`.
fn pair_features<T: Scalar>(support: &SupportSet) -> Vec<T> {
    let e = support.dim();
    let mut feats = Vec::with_capacity(support.len() * (e + 1));
    for i in 0..support.len() {
        feats.extend(support.embedding(i).iter().map(|&v| T::from_f64(v)));
        feats.push(T::from_f64(support.responses()[i]));
    }
    feats
}

fn tokens_from_features<T: Scalar>(params: &ModelParams<T>, feats: &[T], p: usize) -> Vec<T> {
    let cfg = params.config();
    let lay = params.layout();
    let (e, d, k) = (cfg.embed_dim, cfg.d_model, cfg.readout_tokens);
    let n = p + k;
    let mut h = vec![T::ZERO; n * d];
    let bias = params.slice(lay.input_b, d);
    for row in h[..p * d].chunks_exact_mut(d) {
        row.copy_from_slice(bias);
    }
    gemm(
        T::ONE,
        MatRef::new(feats, p, e + 1),
        MatRef::new(params.slice(lay.input_w, (e + 1) * d), e + 1, d),
        T::ONE,
        &mut h,
        d,
    );
    h[p * d..].copy_from_slice(params.slice(lay.readout, k * d));
    h
}

/// Context tokens `[(p + K) x D]` for a support set.
pub fn embed_context<T: Scalar>(params: &ModelParams<T>, support: &SupportSet) -> Result<Vec<T>> {
    check_support(params, support)?;
    let feats = pair_features::<T>(support);
    Ok(tokens_from_features(params, &feats, support.len()))
}

fn layer_norm<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    d: usize,
    xhat: &mut [T],
    rstd: &mut [T],
    out: &mut [T],
) {
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = T::from_f64(rs);
        let xh = &mut xhat[r * d..(r + 1) * d];
        let o = &mut out[r * d..(r + 1) * d];
        for c in 0..d {
            let z = T::from_f64((row[c].to_f64() - mean) * rs);
            xh[c] = z;
            o[c] = z * gain[c] + bias[c];
        }
    }
}

/// Accumulates `dx` into `dx_acc` and the affine gradients into `dgain`/`dbias`.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    d: usize,
    dgain: &mut [T],
    dbias: &mut [T],
    dx_acc: &mut [T],
) {
    let mut dxhat = vec![T::ZERO; d];
    for (r, dyr) in dy.chunks_exact(d).enumerate() {
        let xh = &xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
            mean_dxhat += dxhat[c].to_f64();
            mean_dxhat_xhat += (dxhat[c] * xh[c]).to_f64();
        }
        let m1 = T::from_f64(mean_dxhat / d as f64);
        let m2 = T::from_f64(mean_dxhat_xhat / d as f64);
        let dx = &mut dx_acc[r * d..(r + 1) * d];
        for c in 0..d {
            dx[c] += rstd[r] * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

fn softmax_rows<T: Scalar>(s: &mut [T], n: usize) {
    for row in s.chunks_exact_mut(n) {
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += v.to_f64();
        }
        let inv = T::from_f64(1.0 / sum);
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

fn layer_forward<T: Scalar>(
    params: &ModelParams<T>,
    lo: &LayerOffsets,
    h: &mut [T],
    n: usize,
    c: &mut LayerCache<T>,
) {
    let cfg = params.config();
    let (d, f, heads, dk) = (cfg.d_model, cfg.d_ff, cfg.heads, cfg.head_dim());
    let w = |off: usize, rows: usize, cols: usize| MatRef::new(params.slice(off, rows * cols), rows, cols);

    layer_norm(
        h,
        params.slice(lo.attn_gain, d),
        params.slice(lo.attn_bias, d),
        d,
        &mut c.ln1_xhat,
        &mut c.ln1_rstd,
        &mut c.a,
    );
    let a = MatRef::new(&c.a, n, d);
    gemm(T::ONE, a, w(lo.wq, d, d), T::ZERO, &mut c.q, d);
    gemm(T::ONE, a, w(lo.wk, d, d), T::ZERO, &mut c.k, d);
    gemm(T::ONE, a, w(lo.wv, d, d), T::ZERO, &mut c.v, d);

    let scale = T::from_f64(attention_scale(cfg, n));
    for hd in 0..heads {
        let probs = &mut c.probs[hd * n * n..(hd + 1) * n * n];
        gemm(
            scale,
            MatRef::strided(&c.q[hd * dk..], n, dk, d),
            MatRef::strided(&c.k[hd * dk..], n, dk, d).t(),
            T::ZERO,
            probs,
            n,
        );
        softmax_rows(probs, n);
        gemm(
            T::ONE,
            MatRef::new(probs, n, n),
            MatRef::strided(&c.v[hd * dk..], n, dk, d),
            T::ZERO,
            &mut c.ctx[hd * dk..],
            d,
        );
    }
    gemm(T::ONE, MatRef::new(&c.ctx, n, d), w(lo.wo, d, d), T::ONE, h, d);

    layer_norm(
        h,
        params.slice(lo.ffn_gain, d),
        params.slice(lo.ffn_bias, d),
        d,
        &mut c.ln2_xhat,
        &mut c.ln2_rstd,
        &mut c.b,
    );
    let b = MatRef::new(&c.b, n, d);
    gemm(T::ONE, b, w(lo.w_gate, d, f), T::ZERO, &mut c.u, f);
    gemm(T::ONE, b, w(lo.w_up, d, f), T::ZERO, &mut c.g, f);
    for ((m, &u), &g) in c.m.iter_mut().zip(&c.u).zip(&c.g) {
        *m = u * sigmoid(u) * g;
    }
    gemm(T::ONE, MatRef::new(&c.m, n, f), w(lo.w_down, f, d), T::ONE, h, d);
}

/// Final norm on readout rows, mean pool, affine head.
fn readout<T: Scalar>(
    params: &ModelParams<T>,
    h: &[T],
    p: usize,
    xhat: &mut [T],
    rstd: &mut [T],
    pooled: &mut [T],
) -> Vec<T> {
    let cfg = params.config();
    let lay = params.layout();
    let (e, d, k) = (cfg.embed_dim, cfg.d_model, cfg.readout_tokens);
    let mut normed = vec![T::ZERO; k * d];
    layer_norm(
        &h[p * d..],
        params.slice(lay.final_gain, d),
        params.slice(lay.final_bias, d),
        d,
        xhat,
        rstd,
        &mut normed,
    );
    for c in 0..d {
        let s: f64 = (0..k).map(|r| normed[r * d + c].to_f64()).sum();
        pooled[c] = T::from_f64(s / k as f64);
    }
    let mut omega = params.slice(lay.head_b, e).to_vec();
    gemm(
        T::ONE,
        MatRef::new(pooled, 1, d),
        MatRef::new(params.slice(lay.head_w, d * e), d, e),
        T::ONE,
        &mut omega,
        e,
    );
    omega
}

fn check_finite<T: Scalar>(h: &[T], layer: usize) -> Result<()> {
    if h.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow { layer })
    }
}

/// Forward pass without keeping per-layer activations. Returns the emitted
/// weights and the final layer's attention probabilities `[heads x n x n]`.
pub(crate) fn forward_light<T: Scalar>(
    params: &ModelParams<T>,
    support: &SupportSet,
) -> Result<(Vec<T>, Vec<T>)> {
    check_support(params, support)?;
    let cfg = params.config();
    let p = support.len();
    let n = p + cfg.readout_tokens;
    let feats = pair_features::<T>(support);
    let mut h = tokens_from_features(params, &feats, p);
    let mut cache = LayerCache::new(n, cfg);
    for (l, lo) in params.layout().layers.iter().enumerate() {
        layer_forward(params, lo, &mut h, n, &mut cache);
        check_finite(&h, l)?;
    }
    let k = cfg.readout_tokens;
    let mut xhat = vec![T::ZERO; k * cfg.d_model];
    let mut rstd = vec![T::ZERO; k];
    let mut pooled = vec![T::ZERO; cfg.d_model];
    let omega = readout(params, &h, p, &mut xhat, &mut rstd, &mut pooled);
    check_finite(&omega, cfg.layers)?;
    Ok((omega, cache.probs))
}

pub(crate) fn forward_cached<T: Scalar>(
    params: &ModelParams<T>,
    support: &SupportSet,
) -> Result<(Vec<T>, ForwardCache<T>)> {
    check_support(params, support)?;
    let cfg = params.config();
    let p = support.len();
    let n = p + cfg.readout_tokens;
    let feats = pair_features::<T>(support);
    let mut h = tokens_from_features(params, &feats, p);
    let mut layers = Vec::with_capacity(cfg.layers);
    for (l, lo) in params.layout().layers.iter().enumerate() {
        let mut cache = LayerCache::new(n, cfg);
        layer_forward(params, lo, &mut h, n, &mut cache);
        check_finite(&h, l)?;
        layers.push(cache);
    }
    let k = cfg.readout_tokens;
    let mut final_xhat = vec![T::ZERO; k * cfg.d_model];
    let mut final_rstd = vec![T::ZERO; k];
    let mut pooled = vec![T::ZERO; cfg.d_model];
    let omega = readout(params, &h, p, &mut final_xhat, &mut final_rstd, &mut pooled);
    check_finite(&omega, cfg.layers)?;
    Ok((
        omega,
        ForwardCache {
            n,
            p,
            feats,
            layers,
            final_xhat,
            final_rstd,
            pooled,
        },
    ))
}

/// Adds `d loss / d params` into `grads` (same layout as `params`) given
/// `d loss / d omega`.
pub(crate) fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    d_omega: &[T],
    grads: &mut [T],
) {
    let cfg = params.config();
    let lay = params.layout();
    let (e, d, f, k) = (cfg.embed_dim, cfg.d_model, cfg.d_ff, cfg.readout_tokens);
    let (heads, dk) = (cfg.heads, cfg.head_dim());
    let (n, p) = (cache.n, cache.p);
    let w = |off: usize, rows: usize, cols: usize| MatRef::new(params.slice(off, rows * cols), rows, cols);

    // head
    for (g, &v) in grads[lay.head_b..lay.head_b + e].iter_mut().zip(d_omega) {
        *g += v;
    }
    gemm(
        T::ONE,
        MatRef::new(&cache.pooled, 1, d).t(),
        MatRef::new(d_omega, 1, e),
        T::ONE,
        &mut grads[lay.head_w..lay.head_w + d * e],
        e,
    );
    let mut d_pooled = vec![T::ZERO; d];
    gemm(
        T::ONE,
        MatRef::new(d_omega, 1, e),
        w(lay.head_w, d, e).t(),
        T::ZERO,
        &mut d_pooled,
        d,
    );
    let inv_k = T::from_f64(1.0 / k as f64);
    let d_normed: Vec<T> = (0..k).flat_map(|_| d_pooled.iter().map(move |&v| v * inv_k)).collect();

    let mut dh = vec![T::ZERO; n * d];
    {
        let (dgain, dbias) = grads[lay.final_gain..lay.final_bias + d].split_at_mut(d);
        layer_norm_backward(
            &d_normed,
            &cache.final_xhat,
            &cache.final_rstd,
            params.slice(lay.final_gain, d),
            d,
            dgain,
            dbias,
            &mut dh[p * d..],
        );
    }

    let mut dm = vec![T::ZERO; n * f];
    let mut dgate = vec![T::ZERO; n * f];
    let mut dup = vec![T::ZERO; n * f];
    let mut dx = vec![T::ZERO; n * d];
    let mut dctx = vec![T::ZERO; n * d];
    let mut dq = vec![T::ZERO; n * d];
    let mut dk_ = vec![T::ZERO; n * d];
    let mut dv = vec![T::ZERO; n * d];
    let mut dp = vec![T::ZERO; n * n];
    let scale = T::from_f64(attention_scale(cfg, n));

    for (lo, c) in lay.layers.iter().zip(&cache.layers).rev() {
        // SwiGLU block: h_out = h_mid + m W_down
        gemm(
            T::ONE,
            MatRef::new(&c.m, n, f).t(),
            MatRef::new(&dh, n, d),
            T::ONE,
            &mut grads[lo.w_down..lo.w_down + f * d],
            d,
        );
        gemm(T::ONE, MatRef::new(&dh, n, d), w(lo.w_down, f, d).t(), T::ZERO, &mut dm, f);
        for i in 0..n * f {
            let u = c.u[i];
            let s = sigmoid(u);
            let silu = u * s;
            dup[i] = dm[i] * silu;
            dgate[i] = dm[i] * c.g[i] * s * (T::ONE + u * (T::ONE - s));
        }
        let b_t = MatRef::new(&c.b, n, d).t();
        gemm(T::ONE, b_t, MatRef::new(&dgate, n, f), T::ONE, &mut grads[lo.w_gate..lo.w_gate + d * f], f);
        gemm(T::ONE, b_t, MatRef::new(&dup, n, f), T::ONE, &mut grads[lo.w_up..lo.w_up + d * f], f);
        gemm(T::ONE, MatRef::new(&dgate, n, f), w(lo.w_gate, d, f).t(), T::ZERO, &mut dx, d);
        gemm(T::ONE, MatRef::new(&dup, n, f), w(lo.w_up, d, f).t(), T::ONE, &mut dx, d);
        {
            let (dgain, dbias) = grads[lo.ffn_gain..lo.ffn_bias + d].split_at_mut(d);
            layer_norm_backward(&dx, &c.ln2_xhat, &c.ln2_rstd, params.slice(lo.ffn_gain, d), d, dgain, dbias, &mut dh);
        }

        // attention block: h_mid = h_in + ctx W_o
        gemm(
            T::ONE,
            MatRef::new(&c.ctx, n, d).t(),
            MatRef::new(&dh, n, d),
            T::ONE,
            &mut grads[lo.wo..lo.wo + d * d],
            d,
        );
        gemm(T::ONE, MatRef::new(&dh, n, d), w(lo.wo, d, d).t(), T::ZERO, &mut dctx, d);
        for hd in 0..heads {
            let probs = &c.probs[hd * n * n..(hd + 1) * n * n];
            let dctx_h = MatRef::strided(&dctx[hd * dk..], n, dk, d);
            gemm(T::ONE, dctx_h, MatRef::strided(&c.v[hd * dk..], n, dk, d).t(), T::ZERO, &mut dp, n);
            gemm(T::ONE, MatRef::new(probs, n, n).t(), dctx_h, T::ZERO, &mut dv[hd * dk..], d);
            for r in 0..n {
                let pr = &probs[r * n..(r + 1) * n];
                let dpr = &mut dp[r * n..(r + 1) * n];
                let dot: f64 = pr.iter().zip(dpr.iter()).map(|(&a, &b)| (a * b).to_f64()).sum();
                let dot = T::from_f64(dot);
                for j in 0..n {
                    dpr[j] = pr[j] * (dpr[j] - dot);
                }
            }
            let ds = MatRef::new(&dp, n, n);
            gemm(scale, ds, MatRef::strided(&c.k[hd * dk..], n, dk, d), T::ZERO, &mut dq[hd * dk..], d);
            gemm(scale, ds.t(), MatRef::strided(&c.q[hd * dk..], n, dk, d), T::ZERO, &mut dk_[hd * dk..], d);
        }
        let a_t = MatRef::new(&c.a, n, d).t();
        for (off, dproj) in [(lo.wq, &dq), (lo.wk, &dk_), (lo.wv, &dv)] {
            gemm(T::ONE, a_t, MatRef::new(dproj, n, d), T::ONE, &mut grads[off..off + d * d], d);
        }
        gemm(T::ONE, MatRef::new(&dq, n, d), w(lo.wq, d, d).t(), T::ZERO, &mut dx, d);
        gemm(T::ONE, MatRef::new(&dk_, n, d), w(lo.wk, d, d).t(), T::ONE, &mut dx, d);
        gemm(T::ONE, MatRef::new(&dv, n, d), w(lo.wv, d, d).t(), T::ONE, &mut dx, d);
        {
            let (dgain, dbias) = grads[lo.attn_gain..lo.attn_bias + d].split_at_mut(d);
            layer_norm_backward(&dx, &c.ln1_xhat, &c.ln1_rstd, params.slice(lo.attn_gain, d), d, dgain, dbias, &mut dh);
        }
    }

    // input projection and readout tokens
    gemm(
        T::ONE,
        MatRef::new(&cache.feats, p, e + 1).t(),
        MatRef::new(&dh[..p * d], p, d),
        T::ONE,
        &mut grads[lay.input_w..lay.input_w + (e + 1) * d],
        d,
    );
    for row in dh[..p * d].chunks_exact(d) {
        for (g, &v) in grads[lay.input_b..lay.input_b + d].iter_mut().zip(row) {
            *g += v;
        }
    }
    for (g, &v) in grads[lay.readout..lay.readout + k * d].iter_mut().zip(&dh[p * d..]) {
        *g += v;
    }
}
