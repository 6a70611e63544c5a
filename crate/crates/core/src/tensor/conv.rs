//! Cross-correlation via im2col and GEMM.
//!
//! One-dimensional convolution is the `h = kh = 1` case of the 2D kernel.
//! Samples are processed independently in parallel; weight gradients are
//! reduced over a fixed partition of the batch so the summation order does not
//! depend on the thread count.

use rayon::prelude::*;

use super::{gemm, MatRef, Real};

/// Number of batch partitions used for the weight-gradient reduction.
const REDUCTION_PARTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn in_plane(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.o * self.oh * self.ow
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1 kernel, unit stride, no padding: the input already is its im2col.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let ncol = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    let seg = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let ncol = g.col_cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.out_plane()];
    let wmat = MatRef::new(w, g.o, g.col_rows());
    let ncol = g.col_cols();
    out.par_chunks_mut(g.out_plane())
        .zip(x.par_chunks(g.in_plane()))
        .for_each_init(
            || Vec::new(),
            |cols: &mut Vec<T>, (y, xs)| {
                let colmat = if g.is_pointwise() {
                    MatRef::new(xs, g.c, ncol)
                } else {
                    cols.resize(g.col_rows() * ncol, T::zero());
                    im2col(g, xs, cols);
                    MatRef::new(cols.as_slice(), g.col_rows(), ncol)
                };
                gemm(T::one(), wmat, colmat, T::zero(), y);
                if let Some(b) = b {
                    for (oc, row) in y.chunks_mut(ncol).enumerate() {
                        for v in row {
                            *v += b[oc];
                        }
                    }
                }
            },
        );
    out
}

pub(crate) struct ConvGrads<T> {
    pub x: Option<Vec<T>>,
    pub w: Option<Vec<T>>,
    pub b: Option<Vec<T>>,
}

pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let ncol = g.col_cols();
    let nrow = g.col_rows();
    let wmat = MatRef::new(w, g.o, nrow);

    let gx = need.0.then(|| {
        let mut dx = vec![T::zero(); g.n * g.in_plane()];
        dx.par_chunks_mut(g.in_plane())
            .zip(gy.par_chunks(g.out_plane()))
            .for_each_init(
                || Vec::new(),
                |cols: &mut Vec<T>, (dxs, gys)| {
                    let gmat = MatRef::new(gys, g.o, ncol);
                    if g.is_pointwise() {
                        gemm(T::one(), wmat.t(), gmat, T::zero(), dxs);
                    } else {
                        cols.resize(nrow * ncol, T::zero());
                        gemm(T::one(), wmat.t(), gmat, T::zero(), cols);
                        col2im_add(g, cols, dxs);
                    }
                },
            );
        dx
    });

    let gw = need.1.then(|| {
        let chunk = g.n.div_ceil(REDUCTION_PARTS).max(1);
        let partials: Vec<Vec<T>> = x
            .par_chunks(chunk * g.in_plane())
            .zip(gy.par_chunks(chunk * g.out_plane()))
            .map(|(xs, gys)| {
                let mut acc = vec![T::zero(); g.o * nrow];
                let mut cols = Vec::new();
                for (xn, gn) in xs.chunks(g.in_plane()).zip(gys.chunks(g.out_plane())) {
                    let colmat = if g.is_pointwise() {
                        MatRef::new(xn, g.c, ncol)
                    } else {
                        cols.resize(nrow * ncol, T::zero());
                        im2col(g, xn, &mut cols);
                        MatRef::new(cols.as_slice(), nrow, ncol)
                    };
                    gemm(T::one(), MatRef::new(gn, g.o, ncol), colmat.t(), T::one(), &mut acc);
                }
                acc
            })
            .collect();
        let mut total = vec![T::zero(); g.o * nrow];
        for p in partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    });

    let gb = need.2.then(|| {
        let mut db = vec![T::zero(); g.o];
        for gn in gy.chunks(g.out_plane()) {
            for (oc, row) in gn.chunks(ncol).enumerate() {
                db[oc] += row.iter().copied().sum::<T>();
            }
        }
        db
    });

    ConvGrads {
        x: gx,
        w: gw,
        b: gb,
    }
}
