use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    /// Number of independent planes (batch × channels).
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Square-window max pooling. Padding never wins; ties go to the first
/// position in scan order. Returns the values and the winning in-plane index.
pub(crate) fn max_pool2d_forward<T: Real>(g: &PoolGeom, x: &[T]) -> (Vec<T>, Vec<u32>) {
    let mut out = Vec::with_capacity(g.planes * g.oh * g.ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in x.chunks(g.h * g.w) {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut best = T::neg_infinity();
                let mut best_at = u32::MAX;
                for ki in 0..g.k {
                    let iy = (oy * g.s + ki) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kj in 0..g.k {
                        let ix = (ox * g.s + kj) as isize - g.p as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let at = iy as usize * g.w + ix as usize;
                        if best_at == u32::MAX || plane[at] > best {
                            best = plane[at];
                            best_at = at as u32;
                        }
                    }
                }
                out.push(best);
                arg.push(best_at);
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool2d_backward<T: Real>(g: &PoolGeom, arg: &[u32], gy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); g.planes * g.h * g.w];
    let per_out = g.oh * g.ow;
    for (p, (args, grads)) in arg.chunks(per_out).zip(gy.chunks(per_out)).enumerate() {
        let base = p * g.h * g.w;
        for (&a, &gv) in args.iter().zip(grads) {
            dx[base + a as usize] += gv;
        }
    }
    dx
}

/// Fixed 1D average pooling; zero padding counts toward the divisor.
pub(crate) fn avg_pool1d_forward<T: Real>(
    rows: usize,
    len: usize,
    k: usize,
    s: usize,
    p: usize,
    out_len: usize,
    x: &[T],
) -> Vec<T> {
    let inv = T::one() / T::lit(k as f64);
    let mut out = Vec::with_capacity(rows * out_len);
    for row in x.chunks(len).take(rows) {
        for o in 0..out_len {
            let start = (o * s) as isize - p as isize;
            let mut acc = T::zero();
            for t in start..start + k as isize {
                if t >= 0 && (t as usize) < len {
                    acc += row[t as usize];
                }
            }
            out.push(acc * inv);
        }
    }
    out
}

pub(crate) fn avg_pool1d_backward<T: Real>(
    len: usize,
    k: usize,
    s: usize,
    p: usize,
    out_len: usize,
    gy: &[T],
) -> Vec<T> {
    let inv = T::one() / T::lit(k as f64);
    let rows = gy.len() / out_len;
    let mut dx = vec![T::zero(); rows * len];
    for (drow, grow) in dx.chunks_mut(len).zip(gy.chunks(out_len)) {
        for (o, &gv) in grow.iter().enumerate() {
            let start = (o * s) as isize - p as isize;
            for t in start..start + k as isize {
                if t >= 0 && (t as usize) < len {
                    drow[t as usize] += gv * inv;
                }
            }
        }
    }
    dx
}

/// Window `i` of an adaptive pool over `len` positions into `target` bins:
/// `floor(i·len/target) .. ceil((i+1)·len/target)`.
pub(crate) fn adaptive_window(i: usize, len: usize, target: usize) -> (usize, usize) {
    let start = i * len / target;
    let end = ((i + 1) * len).div_ceil(target);
    (start, end)
}

pub(crate) fn adaptive_avg_pool1d_forward<T: Real>(len: usize, target: usize, x: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len() / len * target);
    for row in x.chunks(len) {
        for i in 0..target {
            let (a, b) = adaptive_window(i, len, target);
            let sum: T = row[a..b].iter().copied().sum();
            out.push(sum / T::lit((b - a) as f64));
        }
    }
    out
}

pub(crate) fn adaptive_avg_pool1d_backward<T: Real>(len: usize, target: usize, gy: &[T]) -> Vec<T> {
    let rows = gy.len() / target;
    let mut dx = vec![T::zero(); rows * len];
    for (drow, grow) in dx.chunks_mut(len).zip(gy.chunks(target)) {
        for (i, &gv) in grow.iter().enumerate() {
            let (a, b) = adaptive_window(i, len, target);
            let share = gv / T::lit((b - a) as f64);
            for d in &mut drow[a..b] {
                *d += share;
            }
        }
    }
    dx
}
