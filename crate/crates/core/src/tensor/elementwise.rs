//! Elementwise kernels and trailing-dimension broadcasting.

use super::{numel, Real};

/// Primitive elementwise operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Exp,
    Log,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(self, ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul)
    }
}

/// Broadcast result shape under trailing alignment, where an extent of 1
/// stretches to match the other operand.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` as seen from a broadcast output of shape `out`;
/// broadcast dimensions get stride 0.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut stride = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = stride;
        }
        stride *= shape[i];
    }
    strides
}

/// Visits every output index together with the matching input offsets.
pub(crate) fn walk_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let outer = numel(out) / last;
    let mut idx = vec![0usize; rank - 1];
    let (mut ba, mut bb) = (0usize, 0usize);
    for row in 0..outer {
        let base = row * last;
        for j in 0..last {
            f(base + j, ba + j * la, bb + j * lb);
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            ba += sa[d];
            bb += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ba -= sa[d] * out[d];
            bb -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary_forward<T: Real>(
    op: ElementwiseOp,
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
) -> Vec<T> {
    let f = |x: T, y: T| match op {
        ElementwiseOp::Add => x + y,
        ElementwiseOp::Sub => x - y,
        ElementwiseOp::Mul => x * y,
        _ => unreachable!("unary op in binary kernel"),
    };
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let mut out = vec![T::zero(); numel(out_shape)];
    walk_broadcast(out_shape, &sa, &sb, |o, ia, ib| out[o] = f(a[ia], b[ib]));
    out
}

/// Gradients of a broadcast binary op, reduced back to the operand shapes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn binary_backward<T: Real>(
    op: ElementwiseOp,
    grad: &[T],
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    need: (bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let mut ga = need.0.then(|| vec![T::zero(); numel(a_shape)]);
    let mut gb = need.1.then(|| vec![T::zero(); numel(b_shape)]);
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    walk_broadcast(out_shape, &sa, &sb, |o, ia, ib| {
        let g = grad[o];
        let (da, db) = match op {
            ElementwiseOp::Add => (g, g),
            ElementwiseOp::Sub => (g, -g),
            ElementwiseOp::Mul => (g * b[ib], g * a[ia]),
            _ => unreachable!("unary op in binary kernel"),
        };
        if let Some(ga) = ga.as_mut() {
            ga[ia] += da;
        }
        if let Some(gb) = gb.as_mut() {
            gb[ib] += db;
        }
    });
    (ga, gb)
}

pub(crate) fn unary_forward<T: Real>(op: ElementwiseOp, x: &[T]) -> Vec<T> {
    match op {
        ElementwiseOp::Relu => x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        ElementwiseOp::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        ElementwiseOp::Exp => x.iter().map(|&v| v.exp()).collect(),
        ElementwiseOp::Log => x.iter().map(|&v| v.ln()).collect(),
        _ => unreachable!("binary op in unary kernel"),
    }
}

/// `x` is the op input and `y` its output.
pub(crate) fn unary_backward<T: Real>(op: ElementwiseOp, grad: &[T], x: &[T], y: &[T]) -> Vec<T> {
    match op {
        // subgradient 0 at the kink
        ElementwiseOp::Relu => grad
            .iter()
            .zip(x)
            .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
            .collect(),
        ElementwiseOp::Sigmoid => grad
            .iter()
            .zip(y)
            .map(|(&g, &s)| g * s * (T::one() - s))
            .collect(),
        ElementwiseOp::Exp => grad.iter().zip(y).map(|(&g, &e)| g * e).collect(),
        ElementwiseOp::Log => grad.iter().zip(x).map(|(&g, &v)| g / v).collect(),
        _ => unreachable!("binary op in unary kernel"),
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[4, 1, 5], &[3, 1]), Some(vec![4, 3, 5]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shape(&[], &[2]), Some(vec![2]));
    }

    #[test]
    fn broadcast_add_rows() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [10.0, 20.0, 30.0];
        let out = binary_forward(ElementwiseOp::Add, &a, &[2, 3], &b, &[3], &[2, 3]);
        assert_eq!(out, vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let (ga, gb) = binary_backward(
            ElementwiseOp::Add,
            &[1.0; 6],
            &a,
            &[2, 3],
            &b,
            &[3],
            &[2, 3],
            (true, true),
        );
        assert_eq!(ga.unwrap(), vec![1.0; 6]);
        assert_eq!(gb.unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn broadcast_middle_singleton() {
        // a: [2,1,2], b: [3,1] -> out [2,3,2]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 30.0];
        let out = binary_forward(ElementwiseOp::Mul, &a, &[2, 1, 2], &b, &[3, 1], &[2, 3, 2]);
        assert_eq!(
            out,
            vec![10.0, 20.0, 20.0, 40.0, 30.0, 60.0, 30.0, 40.0, 60.0, 80.0, 90.0, 120.0]
        );
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
    }
}
