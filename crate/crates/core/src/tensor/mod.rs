//! Dense tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain row-major value. Differentiable computation happens
//! on a [`Tape`]: leaves are registered on the tape, every primitive records a
//! node, and [`Tape::backward`] walks the nodes in reverse creation order.
//!
//! All kernels are generic over [`Real`], so the same code runs in single
//! precision for training and in double precision for gradient checking.

mod conv;
mod elementwise;
mod gradcheck;
mod linalg;
mod norm;
mod pool;
mod tape;

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use elementwise::ElementwiseOp;
pub use gradcheck::{grad_check, relative_error};
pub use norm::{BatchNormConfig, NormMode, RunningStats, StandardizeLayout};
pub use tape::{Tape, Var};

pub(crate) use linalg::{gemm, MatRef};

/// Floating point scalar usable by every kernel.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// Short name used in diagnostics and checkpoint manifests.
    const NAME: &'static str;

    /// Converts an `f64` literal.
    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// `c = alpha * a * b + beta * c` over strided row/column views.
    ///
    /// # Safety
    /// All pointers must be valid for the given dimensions and strides, and
    /// `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn lit(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn lit(v: f64) -> Self {
        v
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Tolerances for the two numeric precisions.
pub mod tolerance {
    /// Relative error accepted by finite-difference checks in `f64`.
    pub const GRAD_CHECK_F64: f64 = 1e-4;
    /// Central-difference step used with `f64`.
    pub const GRAD_STEP_F64: f64 = 1e-5;
    /// Forward agreement with brute-force references in `f64`.
    pub const REFERENCE_F64: f64 = 1e-6;
    /// Forward agreement with brute-force references in `f32`.
    pub const REFERENCE_F32: f64 = 1e-4;
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("×"))
}

/// Output length of a sliding window: `floor((len + 2 pad - k) / stride) + 1`.
pub fn window_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Dense row-major array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero extent in {}", shape_str(&shape))));
        }
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} needs {} values, got {}", shape_str(&shape), numel(&shape), data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{} -> {}", shape_str(&self.shape), shape_str(&shape)),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
                .fold(0.0, f64::max),
        )
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{} [", shape_str(&self.shape))?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", …")?;
        }
        write!(f, "]")
    }
}
