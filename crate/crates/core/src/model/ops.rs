//! Forward and backward kernels shared by the encoder and the cross-channel
//! block.

use crate::linalg::{affine, affine_backward, gemm_into, View};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// Branchless `e^x` for the softmax and GELU inner loops, where the libm
/// call dominates the profile. Within about 2 ulp of [`f64::exp`] on
/// `[-708, 709]`; arguments outside saturate to the end values. NaN
/// propagates.
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // 1.5·2^52: adding it rounds to an integer held in the low mantissa bits.
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-708.0, 709.0);
    let t = x * LOG2E + SHIFTER;
    let k = t - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to r^13; |r| ≤ ln2/2 leaves a remainder below 1e-17.
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = f64::from_bits((t.to_bits().wrapping_add(1023)) << 52);
    p * scale
}

fn tanh(y: f64) -> f64 {
    1.0 - 2.0 / (exp(2.0 * y) + 1.0)
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + LN_EPS).sqrt())
}

/// Row-wise layer norm of `x: rows × d`.
pub fn layer_norm(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LnCache) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let (mean, s) = row_stats(row);
        rstd[r] = s;
        for i in 0..d {
            let h = (row[i] - mean) * s;
            xhat[r * d + i] = h;
            y[r * d + i] = gamma[i] * h + beta[i];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// [`layer_norm`] without the backward cache.
pub fn layer_norm_eval(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (row, out) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let (mean, s) = row_stats(row);
        for i in 0..d {
            out[i] = gamma[i] * ((row[i] - mean) * s) + beta[i];
        }
    }
    y
}

/// Accumulates `dγ, dβ` and returns `dx`.
pub fn layer_norm_backward(
    dy: &[f64],
    d: usize,
    gamma: &[f64],
    cache: &LnCache,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let rows = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..d {
            dgamma[i] += dyr[i] * xh[i];
            dbeta[i] += dyr[i];
            dxhat[i] = dyr[i] * gamma[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let s = cache.rstd[r];
        for i in 0..d {
            dx[r * d + i] = s * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

pub struct AttnCache {
    pub u: Vec<f64>,
    pub qkv: Vec<f64>,
    /// `[seq][head][T × T]` softmax weights.
    pub probs: Vec<f64>,
    pub ctx: Vec<f64>,
}

pub struct AttnWeights<'a> {
    pub qkv_w: &'a [f64],
    pub qkv_b: &'a [f64],
    pub out_w: &'a [f64],
    pub out_b: &'a [f64],
}

/// Multi-head self-attention over `n_seq` independent sequences of `t`
/// tokens; `u` is `(n_seq·t) × d`.
pub fn attention(
    u: Vec<f64>,
    n_seq: usize,
    t: usize,
    d: usize,
    heads: usize,
    w: &AttnWeights,
) -> (Vec<f64>, AttnCache) {
    let rows = n_seq * t;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let qkv = affine(&u, rows, d, w.qkv_w, w.qkv_b, 3 * d);
    let mut probs = vec![0.0; n_seq * heads * t * t];
    let mut ctx = vec![0.0; rows * d];
    for s in 0..n_seq {
        let base = s * t * 3 * d;
        for h in 0..heads {
            let q = View::strided(&qkv[base + h * dh..], t, dh, 3 * d);
            let k = View::strided(&qkv[base + d + h * dh..], t, dh, 3 * d);
            let v = View::strided(&qkv[base + 2 * d + h * dh..], t, dh, 3 * d);
            let p = &mut probs[(s * heads + h) * t * t..(s * heads + h + 1) * t * t];
            head_attention(q, k, v, p, t, scale, &mut ctx[s * t * d + h * dh..], d);
        }
    }
    let out = affine(&ctx, rows, d, w.out_w, w.out_b, d);
    (out, AttnCache { u, qkv, probs, ctx })
}

/// [`attention`] without the backward cache; one `t × t` score buffer is
/// reused for every head.
pub fn attention_eval(
    u: &[f64],
    n_seq: usize,
    t: usize,
    d: usize,
    heads: usize,
    w: &AttnWeights,
) -> Vec<f64> {
    let rows = n_seq * t;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let qkv = affine(u, rows, d, w.qkv_w, w.qkv_b, 3 * d);
    let mut p = vec![0.0; t * t];
    let mut ctx = vec![0.0; rows * d];
    for s in 0..n_seq {
        let base = s * t * 3 * d;
        for h in 0..heads {
            let q = View::strided(&qkv[base + h * dh..], t, dh, 3 * d);
            let k = View::strided(&qkv[base + d + h * dh..], t, dh, 3 * d);
            let v = View::strided(&qkv[base + 2 * d + h * dh..], t, dh, 3 * d);
            head_attention(q, k, v, &mut p, t, scale, &mut ctx[s * t * d + h * dh..], d);
        }
    }
    affine(&ctx, rows, d, w.out_w, w.out_b, d)
}

/// `softmax(scale·q·kᵀ)` into `p`, then `p·v` into the head's columns of
/// `ctx`.
#[allow(clippy::too_many_arguments)]
fn head_attention(
    q: View,
    k: View,
    v: View,
    p: &mut [f64],
    t: usize,
    scale: f64,
    ctx: &mut [f64],
    ld_ctx: usize,
) {
    gemm_into(q, k.t(), p, t, 0.0);
    for row in p.chunks_exact_mut(t) {
        let mut max = f64::NEG_INFINITY;
        for x in row.iter_mut() {
            *x *= scale;
            max = max.max(*x);
        }
        // Separate passes so the exponentials vectorise.
        row.iter_mut().for_each(|x| *x = exp(*x - max));
        let sum: f64 = row.iter().sum();
        let inv = 1.0 / sum;
        row.iter_mut().for_each(|x| *x *= inv);
    }
    gemm_into(View::new(p, t, t), v, ctx, ld_ctx, 0.0);
}

pub struct AttnGrads<'a> {
    pub qkv_w: &'a mut [f64],
    pub qkv_b: &'a mut [f64],
    pub out_w: &'a mut [f64],
    pub out_b: &'a mut [f64],
}

/// Backward of [`attention`]; accumulates weight gradients and returns `du`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    dout: &[f64],
    cache: &AttnCache,
    n_seq: usize,
    t: usize,
    d: usize,
    heads: usize,
    w: &AttnWeights,
    g: AttnGrads,
) -> Vec<f64> {
    let rows = n_seq * t;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let dctx = affine_backward(
        &cache.ctx, rows, d, w.out_w, d, dout, g.out_w, g.out_b, true,
    )
    .unwrap();
    let mut dqkv = vec![0.0; rows * 3 * d];
    let mut dp = vec![0.0; t * t];
    for s in 0..n_seq {
        let base = s * t * 3 * d;
        for h in 0..heads {
            let q = View::strided(&cache.qkv[base + h * dh..], t, dh, 3 * d);
            let k = View::strided(&cache.qkv[base + d + h * dh..], t, dh, 3 * d);
            let v = View::strided(&cache.qkv[base + 2 * d + h * dh..], t, dh, 3 * d);
            let p = &cache.probs[(s * heads + h) * t * t..(s * heads + h + 1) * t * t];
            let dc = View::strided(&dctx[s * t * d + h * dh..], t, dh, d);
            // dV = Pᵀ·dctx
            gemm_into(
                View::new(p, t, t).t(),
                dc,
                &mut dqkv[base + 2 * d + h * dh..],
                3 * d,
                0.0,
            );
            // dP = dctx·Vᵀ, then softmax backward into scaled dS
            gemm_into(dc, v.t(), &mut dp, t, 0.0);
            for (dprow, prow) in dp.chunks_exact_mut(t).zip(p.chunks_exact(t)) {
                let dot: f64 = dprow.iter().zip(prow).map(|(a, b)| a * b).sum();
                for (x, pv) in dprow.iter_mut().zip(prow) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            let ds = View::new(&dp, t, t);
            // dQ = dS·K, dK = dSᵀ·Q
            gemm_into(ds, k, &mut dqkv[base + h * dh..], 3 * d, 0.0);
            gemm_into(ds.t(), q, &mut dqkv[base + d + h * dh..], 3 * d, 0.0);
        }
    }
    affine_backward(
        &cache.u,
        rows,
        d,
        w.qkv_w,
        3 * d,
        &dqkv,
        g.qkv_w,
        g.qkv_b,
        true,
    )
    .unwrap()
}

pub struct ConvCache {
    pub h1: Vec<f64>,
    pub a1: Vec<f64>,
    pub h2: Vec<f64>,
    pub a2: Vec<f64>,
}

pub struct ConvShape {
    pub d: usize,
    pub k1: usize,
    pub k2: usize,
    pub c1: usize,
    pub c2: usize,
}

/// Output range `lo..hi` for which `i + shift` indexes a length-`d` row.
fn shift_range(d: usize, shift: isize) -> (usize, usize) {
    (
        (-shift).max(0) as usize,
        (d as isize - shift).min(d as isize) as usize,
    )
}

/// `out[i] += w·x[i + shift]` wherever `i + shift` is in bounds.
fn shifted_axpy(w: f64, x: &[f64], out: &mut [f64], shift: isize) {
    let (lo, hi) = shift_range(out.len(), shift);
    let src = &x[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
    out[lo..hi]
        .iter_mut()
        .zip(src)
        .for_each(|(o, v)| *o += w * v);
}

/// `dx[i + shift] += w·dy[i]`, the adjoint of [`shifted_axpy`].
fn shifted_axpy_transpose(w: f64, dy: &[f64], dx: &mut [f64], shift: isize) {
    let (lo, hi) = shift_range(dy.len(), shift);
    let dst = &mut dx[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
    dst.iter_mut()
        .zip(&dy[lo..hi])
        .for_each(|(o, v)| *o += w * v);
}

/// `Σ_i dy[i]·x[i + shift]` over the in-bounds range, with four partial sums
/// so the loop vectorises.
fn shifted_dot(dy: &[f64], x: &[f64], shift: isize) -> f64 {
    let (lo, hi) = shift_range(dy.len(), shift);
    let a = &dy[lo..hi];
    let b = &x[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac
        .remainder()
        .iter()
        .zip(bc.remainder())
        .map(|(u, v)| u * v)
        .sum();
    for (u, v) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += u[k] * v[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Two zero-padded "same" 1-D convolutions along the embedding axis of each
/// token, GELU after both. Returns the flattened `[tokens × c2·d]`
/// activations.
pub fn conv_forward(
    e: &[f64],
    sh: &ConvShape,
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
) -> ConvCache {
    let ConvShape { d, k1, k2, c1, c2 } = *sh;
    let n = e.len() / d;
    let (p1, p2) = ((k1 / 2) as isize, (k2 / 2) as isize);
    let mut h1 = vec![0.0; n * c1 * d];
    let mut h2 = vec![0.0; n * c2 * d];
    for tok in 0..n {
        let x = &e[tok * d..(tok + 1) * d];
        let h1t = &mut h1[tok * c1 * d..(tok + 1) * c1 * d];
        for c in 0..c1 {
            let out = &mut h1t[c * d..(c + 1) * d];
            out.fill(b1[c]);
            for j in 0..k1 {
                shifted_axpy(w1[c * k1 + j], x, out, j as isize - p1);
            }
        }
    }
    let a1: Vec<f64> = h1.iter().map(|&v| gelu(v)).collect();
    for tok in 0..n {
        let a1t = &a1[tok * c1 * d..(tok + 1) * c1 * d];
        let h2t = &mut h2[tok * c2 * d..(tok + 1) * c2 * d];
        for o in 0..c2 {
            let out = &mut h2t[o * d..(o + 1) * d];
            out.fill(b2[o]);
            for c in 0..c1 {
                let src_row = &a1t[c * d..(c + 1) * d];
                for j in 0..k2 {
                    shifted_axpy(w2[(o * c1 + c) * k2 + j], src_row, out, j as isize - p2);
                }
            }
        }
    }
    let a2 = h2.iter().map(|&v| gelu(v)).collect();
    ConvCache { h1, a1, h2, a2 }
}

pub struct ConvGrads<'a> {
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
}

/// Backward of [`conv_forward`] given `da2`; accumulates kernel gradients
/// into `g` and adds the input gradient into `de`.
pub fn conv_backward(
    da2: &[f64],
    e: &[f64],
    cache: &ConvCache,
    sh: &ConvShape,
    w1: &[f64],
    w2: &[f64],
    g: ConvGrads,
    de: &mut [f64],
) {
    let ConvShape { d, k1, k2, c1, c2 } = *sh;
    let n = e.len() / d;
    let (p1, p2) = ((k1 / 2) as isize, (k2 / 2) as isize);
    let mut da1 = vec![0.0; c1 * d];
    let mut dh2 = vec![0.0; c2 * d];
    for tok in 0..n {
        for (i, v) in dh2.iter_mut().enumerate() {
            *v = da2[tok * c2 * d + i] * gelu_grad(cache.h2[tok * c2 * d + i]);
        }
        let a1t = &cache.a1[tok * c1 * d..(tok + 1) * c1 * d];
        da1.fill(0.0);
        for o in 0..c2 {
            let dh = &dh2[o * d..(o + 1) * d];
            g.b2[o] += dh.iter().sum::<f64>();
            for c in 0..c1 {
                let src_row = &a1t[c * d..(c + 1) * d];
                let da_row = &mut da1[c * d..(c + 1) * d];
                for j in 0..k2 {
                    let widx = (o * c1 + c) * k2 + j;
                    let shift = j as isize - p2;
                    g.w2[widx] += shifted_dot(dh, src_row, shift);
                    shifted_axpy_transpose(w2[widx], dh, da_row, shift);
                }
            }
        }
        let x = &e[tok * d..(tok + 1) * d];
        let det = &mut de[tok * d..(tok + 1) * d];
        let h1t = &cache.h1[tok * c1 * d..(tok + 1) * c1 * d];
        for (v, h) in da1.iter_mut().zip(h1t) {
            *v *= gelu_grad(*h);
        }
        for c in 0..c1 {
            let dh1 = &da1[c * d..(c + 1) * d];
            g.b1[c] += dh1.iter().sum::<f64>();
            for j in 0..k1 {
                let shift = j as isize - p1;
                g.w1[c * k1 + j] += shifted_dot(dh1, x, shift);
                shifted_axpy_transpose(w1[c * k1 + j], dh1, det, shift);
            }
        }
    }
}
