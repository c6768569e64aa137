//! Whole-sequence GRU kernel with hand-written backpropagation through time.
//!
//! Recording a GRU step by step costs about twenty tape nodes per time step
//! and computes the recurrent weight gradients as one rank-1 update per step.
//! This kernel runs the same arithmetic in one pass, keeps the gate values it
//! needs for the backward sweep, and forms each weight gradient as a single
//! `Hᵀ·Δ` product at the end.

use super::math::{sigmoid, tanh};
use super::tensor::{has_fma, matmul_acc, matmul_at_acc, matmul_bt_acc};

/// Gate order everywhere: update, reset, candidate.
pub(crate) struct GruWeights<'a> {
    pub w: [&'a [f64]; 3],
    pub u: [&'a [f64]; 3],
    pub b: [&'a [f64]; 3],
    pub input_dim: usize,
    pub hidden: usize,
}

/// Values kept from the forward pass, each `[steps, hidden]`.
#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub rh: Vec<f64>,
}

pub(crate) struct GruGrads {
    pub x: Vec<f64>,
    pub h0: Vec<f64>,
    pub w: [Vec<f64>; 3],
    pub u: [Vec<f64>; 3],
    pub b: [Vec<f64>; 3],
}

/// Returns every hidden state (`[steps, hidden]`) and the cache.
///
/// Sums are formed in the same order as the step-by-step recording
/// (`x·W + h·U`, then the bias), so both paths agree bit for bit.
pub(crate) fn forward(p: &GruWeights, x: &[f64], steps: usize, h0: &[f64]) -> (Vec<f64>, GruCache) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the CPU supports AVX2 and FMA, checked just above.
        return unsafe { simd::forward(p, x, steps, h0) };
    }
    forward_body(p, x, steps, h0)
}

/// Backpropagates `g = ∂L/∂states` through the whole sequence.
pub(crate) fn backward(
    p: &GruWeights,
    x: &[f64],
    steps: usize,
    h0: &[f64],
    states: &[f64],
    cache: &GruCache,
    g: &[f64],
) -> GruGrads {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: as above.
        return unsafe { simd::backward(p, x, steps, h0, states, cache, g) };
    }
    backward_body(p, x, steps, h0, states, cache, g)
}

// Compiling the bodies for AVX2 lets the gate loops vectorize; the matrix
// products inside dispatch on their own.
#[cfg(target_arch = "x86_64")]
mod simd {
    use super::*;

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn forward(
        p: &GruWeights,
        x: &[f64],
        steps: usize,
        h0: &[f64],
    ) -> (Vec<f64>, GruCache) {
        forward_body(p, x, steps, h0)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn backward(
        p: &GruWeights,
        x: &[f64],
        steps: usize,
        h0: &[f64],
        states: &[f64],
        cache: &GruCache,
        g: &[f64],
    ) -> GruGrads {
        backward_body(p, x, steps, h0, states, cache, g)
    }
}

#[inline(always)]
fn forward_body(p: &GruWeights, x: &[f64], steps: usize, h0: &[f64]) -> (Vec<f64>, GruCache) {
    let (n, k) = (p.hidden, p.input_dim);
    let xw: Vec<Vec<f64>> =
        p.w.iter()
            .map(|w| {
                let mut out = vec![0.0; steps * n];
                matmul_acc(x, w, &mut out, steps, k, n);
                out
            })
            .collect();
    let mut states = vec![0.0; steps * n];
    let mut cache = GruCache {
        z: vec![0.0; steps * n],
        r: vec![0.0; steps * n],
        c: vec![0.0; steps * n],
        rh: vec![0.0; steps * n],
    };
    let mut hu = vec![0.0; n];
    for t in 0..steps {
        let row = t * n..(t + 1) * n;
        let (done, rest) = states.split_at_mut(t * n);
        let h_prev = if t == 0 { h0 } else { &done[(t - 1) * n..] };
        let h_new = &mut rest[..n];
        for (gate, out) in [(0, &mut cache.z), (1, &mut cache.r)] {
            hu.fill(0.0);
            matmul_acc(h_prev, p.u[gate], &mut hu, 1, n, n);
            let pre = xw[gate][row.clone()].iter().zip(&hu).zip(p.b[gate]);
            for (o, ((xw, hu), b)) in out[row.clone()].iter_mut().zip(pre) {
                *o = sigmoid((xw + hu) + b);
            }
        }
        for ((rh, r), h) in cache.rh[row.clone()]
            .iter_mut()
            .zip(&cache.r[row.clone()])
            .zip(h_prev)
        {
            *rh = r * h;
        }
        hu.fill(0.0);
        matmul_acc(&cache.rh[row.clone()], p.u[2], &mut hu, 1, n, n);
        let pre = xw[2][row.clone()].iter().zip(&hu).zip(p.b[2]);
        for (c, ((xw, hu), b)) in cache.c[row.clone()].iter_mut().zip(pre) {
            *c = tanh((xw + hu) + b);
        }
        let zc = cache.z[row.clone()].iter().zip(&cache.c[row]);
        for ((h, hp), (z, c)) in h_new.iter_mut().zip(h_prev).zip(zc) {
            *h = hp + z * (c - hp);
        }
    }
    (states, cache)
}

#[inline(always)]
fn backward_body(
    p: &GruWeights,
    x: &[f64],
    steps: usize,
    h0: &[f64],
    states: &[f64],
    cache: &GruCache,
    g: &[f64],
) -> GruGrads {
    let (n, k) = (p.hidden, p.input_dim);
    // Recurrent weights transposed once so each per-step product is a
    // row-vector times matrix; the update and reset gates share one product.
    let transpose = |u: &[f64]| -> Vec<f64> {
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                t[j * n + i] = u[i * n + j];
            }
        }
        t
    };
    let mut ut_zr = transpose(p.u[0]);
    ut_zr.extend(transpose(p.u[1]));
    let ut_c = transpose(p.u[2]);
    // Pre-activation gradients per gate, `[steps, hidden]`.
    let mut da: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; steps * n]);
    let mut dh_next = vec![0.0; n];
    let mut d_rh = vec![0.0; n];
    let mut dh_prev = vec![0.0; n];
    let mut da_zr = vec![0.0; 2 * n];
    for t in (0..steps).rev() {
        let h_prev = if t == 0 {
            h0
        } else {
            &states[(t - 1) * n..t * n]
        };
        let row = t * n..(t + 1) * n;
        for j in 0..n {
            let dh = g[t * n + j] + dh_next[j];
            let (z, c) = (cache.z[t * n + j], cache.c[t * n + j]);
            let dz = dh * (c - h_prev[j]);
            let dc = dh * z;
            dh_prev[j] = dh * (1.0 - z);
            da[2][t * n + j] = dc * (1.0 - c * c);
            da_zr[j] = dz * z * (1.0 - z);
        }
        d_rh.iter_mut().for_each(|v| *v = 0.0);
        matmul_acc(&da[2][row.clone()], &ut_c, &mut d_rh, 1, n, n);
        for j in 0..n {
            let r = cache.r[t * n + j];
            dh_prev[j] += d_rh[j] * r;
            da_zr[n + j] = d_rh[j] * h_prev[j] * r * (1.0 - r);
        }
        matmul_acc(&da_zr, &ut_zr, &mut dh_prev, 1, 2 * n, n);
        da[0][row.clone()].copy_from_slice(&da_zr[..n]);
        da[1][row].copy_from_slice(&da_zr[n..]);
        std::mem::swap(&mut dh_next, &mut dh_prev);
    }

    let mut h_before = Vec::with_capacity(steps * n);
    h_before.extend_from_slice(h0);
    h_before.extend_from_slice(&states[..(steps - 1) * n]);

    let mut grads = GruGrads {
        x: vec![0.0; steps * k],
        h0: dh_next,
        w: std::array::from_fn(|_| vec![0.0; k * n]),
        u: std::array::from_fn(|_| vec![0.0; n * n]),
        b: std::array::from_fn(|_| vec![0.0; n]),
    };
    for gate in 0..3 {
        let d = &da[gate];
        matmul_at_acc(x, d, &mut grads.w[gate], steps, k, n);
        let lhs = if gate == 2 { &cache.rh } else { &h_before };
        matmul_at_acc(lhs, d, &mut grads.u[gate], steps, n, n);
        for row in d.chunks_exact(n) {
            for (o, v) in grads.b[gate].iter_mut().zip(row) {
                *o += v;
            }
        }
        matmul_bt_acc(d, p.w[gate], &mut grads.x, steps, k, n);
    }
    grads
}
