//! Normalization kernels: batch normalization over channels and a general
//! "standardize along one axis" kernel backing layer normalization and task
//! context normalization.

use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Running mean and (unbiased) variance tracked by batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub(crate) struct NormForward<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// `x` is laid out `(n, c, s)`; statistics are per channel over `n·s` values.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_forward<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    s: usize,
    gain: &[T],
    shift: &[T],
    stats: &mut RunningStats<T>,
    mode: NormMode,
    cfg: BatchNormConfig,
) -> NormForward<T> {
    let eps = T::lit(cfg.eps);
    let count = n * s;
    let (mean, var) = match mode {
        NormMode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for sample in x.chunks(c * s) {
                for (ch, row) in sample.chunks(s).enumerate() {
                    mean[ch] += row.iter().copied().sum::<T>();
                }
            }
            let inv_count = T::one() / T::lit(count as f64);
            mean.iter_mut().for_each(|m| *m *= inv_count);
            for sample in x.chunks(c * s) {
                for (ch, row) in sample.chunks(s).enumerate() {
                    let m = mean[ch];
                    var[ch] += row.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v *= inv_count);

            let mom = T::lit(cfg.momentum);
            let unbias = T::lit(count as f64 / (count as f64 - 1.0));
            for ch in 0..c {
                stats.mean[ch] = (T::one() - mom) * stats.mean[ch] + mom * mean[ch];
                stats.var[ch] = (T::one() - mom) * stats.var[ch] + mom * var[ch] * unbias;
            }
            (mean, var)
        }
        NormMode::Eval => (stats.mean.clone(), stats.var.clone()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for ((xs, hs), ys) in x.chunks(c * s).zip(xhat.chunks_mut(c * s)).zip(y.chunks_mut(c * s)) {
        for ch in 0..c {
            let range = ch * s..(ch + 1) * s;
            for ((&v, h), out) in xs[range.clone()].iter().zip(&mut hs[range.clone()]).zip(&mut ys[range]) {
                *h = (v - mean[ch]) * inv_std[ch];
                *out = gain[ch] * *h + shift[ch];
            }
        }
    }
    NormForward { y, xhat, inv_std }
}

pub(crate) struct NormGrads<T> {
    pub x: Vec<T>,
    pub gain: Vec<T>,
    pub shift: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_backward<T: Real>(
    gy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gain: &[T],
    n: usize,
    c: usize,
    s: usize,
    mode: NormMode,
) -> NormGrads<T> {
    let mut ggain = vec![T::zero(); c];
    let mut gshift = vec![T::zero(); c];
    for (gs, hs) in gy.chunks(c * s).zip(xhat.chunks(c * s)) {
        for ch in 0..c {
            let range = ch * s..(ch + 1) * s;
            for (&g, &h) in gs[range.clone()].iter().zip(&hs[range]) {
                ggain[ch] += g * h;
                gshift[ch] += g;
            }
        }
    }
    let mut gx = vec![T::zero(); gy.len()];
    let count = T::lit((n * s) as f64);
    for ((gs, hs), dxs) in gy.chunks(c * s).zip(xhat.chunks(c * s)).zip(gx.chunks_mut(c * s)) {
        for ch in 0..c {
            let range = ch * s..(ch + 1) * s;
            let scale = gain[ch] * inv_std[ch];
            for ((&g, &h), dx) in gs[range.clone()].iter().zip(&hs[range.clone()]).zip(&mut dxs[range]) {
                *dx = match mode {
                    NormMode::Train => scale * (g - gshift[ch] / count - h * ggain[ch] / count),
                    NormMode::Eval => scale * g,
                };
            }
        }
    }
    NormGrads {
        x: gx,
        gain: ggain,
        shift: gshift,
    }
}

/// View of a tensor as `(outer, n, inner)`: statistics are taken over the `n`
/// axis separately for every `(outer, inner)` coordinate.
///
/// The learned affine of element `(o, j, i)` is indexed by
/// `((j·inner + i) / affine_div) % affine_len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StandardizeLayout {
    pub outer: usize,
    pub n: usize,
    pub inner: usize,
    pub affine_div: usize,
    pub affine_len: usize,
}

impl StandardizeLayout {
    fn affine_index(&self, j: usize, i: usize) -> usize {
        ((j * self.inner + i) / self.affine_div) % self.affine_len
    }
}

pub(crate) fn standardize_forward<T: Real>(
    x: &[T],
    l: &StandardizeLayout,
    gain: &[T],
    shift: &[T],
    eps: f64,
) -> NormForward<T> {
    let eps = T::lit(eps);
    let block = l.n * l.inner;
    let inv_n = T::one() / T::lit(l.n as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); l.outer * l.inner];
    let mut mean = vec![T::zero(); l.inner];
    let mut var = vec![T::zero(); l.inner];
    for o in 0..l.outer {
        let xs = &x[o * block..(o + 1) * block];
        mean.fill(T::zero());
        var.fill(T::zero());
        for row in xs.chunks(l.inner) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_n);
        for row in xs.chunks(l.inner) {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                *s += (v - m) * (v - m);
            }
        }
        let inv = &mut inv_std[o * l.inner..(o + 1) * l.inner];
        for (iv, &s) in inv.iter_mut().zip(&var) {
            *iv = T::one() / (s * inv_n + eps).sqrt();
        }
        for j in 0..l.n {
            let base = o * block + j * l.inner;
            for i in 0..l.inner {
                let h = (x[base + i] - mean[i]) * inv[i];
                let a = l.affine_index(j, i);
                xhat[base + i] = h;
                y[base + i] = gain[a] * h + shift[a];
            }
        }
    }
    NormForward { y, xhat, inv_std }
}

pub(crate) fn standardize_backward<T: Real>(
    gy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gain: &[T],
    l: &StandardizeLayout,
) -> NormGrads<T> {
    let block = l.n * l.inner;
    let nn = T::lit(l.n as f64);
    let mut gx = vec![T::zero(); gy.len()];
    let mut ggain = vec![T::zero(); l.affine_len];
    let mut gshift = vec![T::zero(); l.affine_len];
    let mut ghat = vec![T::zero(); block];
    let mut sum_g = vec![T::zero(); l.inner];
    let mut sum_gh = vec![T::zero(); l.inner];
    for o in 0..l.outer {
        sum_g.fill(T::zero());
        sum_gh.fill(T::zero());
        for j in 0..l.n {
            let base = o * block + j * l.inner;
            for i in 0..l.inner {
                let a = l.affine_index(j, i);
                let (g, h) = (gy[base + i], xhat[base + i]);
                ggain[a] += g * h;
                gshift[a] += g;
                let gh = g * gain[a];
                ghat[j * l.inner + i] = gh;
                sum_g[i] += gh;
                sum_gh[i] += gh * h;
            }
        }
        for j in 0..l.n {
            let base = o * block + j * l.inner;
            for i in 0..l.inner {
                let inv = inv_std[o * l.inner + i];
                gx[base + i] = inv / nn
                    * (nn * ghat[j * l.inner + i] - sum_g[i] - xhat[base + i] * sum_gh[i]);
            }
        }
    }
    NormGrads {
        x: gx,
        gain: ggain,
        shift: gshift,
    }
}
