use std::collections::HashMap;
use std::sync::Arc;

use super::conv::{conv_backward, conv_forward, ConvGeom};
use super::elementwise::{
    binary_backward, binary_forward, broadcast_shape, sigmoid, unary_backward, unary_forward,
    ElementwiseOp,
};
use super::norm::{
    batch_norm_backward, batch_norm_forward, standardize_backward, standardize_forward,
    BatchNormConfig, NormMode, RunningStats, StandardizeLayout,
};
use super::pool::{
    adaptive_avg_pool1d_backward, adaptive_avg_pool1d_forward, avg_pool1d_backward,
    avg_pool1d_forward, max_pool2d_backward, max_pool2d_forward, PoolGeom,
};
use super::{gemm, numel, shape_str, window_out_len, MatRef, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    /// Computed value that takes no part in differentiation.
    Detached,
    Binary { op: ElementwiseOp, a: Var, b: Var },
    Relu { x: Var, mask: Vec<bool> },
    Unary { op: ElementwiseOp, x: Var },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    SumAxis { x: Var, n: usize, inner: usize },
    Reshape { x: Var },
    IndexSelect { x: Var, n_in: usize, inner: usize, indices: Vec<usize> },
    Concat { inputs: Vec<Var>, widths: Vec<usize> },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, fin: usize, fout: usize },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool2d { x: Var, geom: PoolGeom, arg: Vec<u32> },
    AvgPool1d { x: Var, len: usize, k: usize, s: usize, p: usize, out_len: usize },
    AdaptiveAvgPool1d { x: Var, len: usize, target: usize },
    BatchNorm { x: Var, gain: Var, shift: Var, xhat: Vec<T>, inv_std: Vec<T>, n: usize, c: usize, s: usize, mode: NormMode },
    Standardize { x: Var, gain: Var, shift: Var, xhat: Vec<T>, inv_std: Vec<T>, layout: StandardizeLayout },
    LogSoftmax { x: Var, cols: usize },
    BceWithLogits { logits: Var, targets: Vec<T> },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Arc<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
    /// Some backward rule reads this node's value.
    needed: bool,
    released: bool,
}

/// Records primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in creation order, which is a valid topological order;
/// [`Tape::backward`] replays them in reverse. Gradients of leaves accumulate
/// across backward calls until [`Tape::zero_grads`].
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
    bindings: HashMap<usize, Var>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            bindings: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape on which no leaf requires a gradient, so no backward context is
    /// kept and every intermediate can be released.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- leaves and accessors -------------------------------------------

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.push_leaf(shape, Arc::new(t.into_data()), requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    /// Registers shared storage under an external key (a parameter id).
    /// Binding the same key twice returns the first handle.
    pub fn bind(&mut self, key: usize, shape: &[usize], data: &Arc<Vec<T>>, requires_grad: bool) -> Var {
        if let Some(&v) = self.bindings.get(&key) {
            return v;
        }
        let v = self.push_leaf(shape.to_vec(), Arc::clone(data), requires_grad);
        self.bindings.insert(key, v);
        v
    }

    /// All keyed leaves registered with [`Tape::bind`].
    pub fn bindings(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.bindings.iter().map(|(&k, &v)| (k, v))
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Arc<Vec<T>>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
            needed: false,
            released: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        assert!(!node.released, "value of node {} was released", v.0);
        &node.value
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.clear();
    }

    /// Declares that no further forward operation will read `v`. The value is
    /// dropped unless a backward rule still needs it.
    pub fn release(&mut self, v: Var) {
        let node = &mut self.nodes[v.0];
        if !node.needed && !matches!(node.op, Op::Leaf) {
            node.value = Arc::new(Vec::new());
            node.released = true;
        }
    }

    fn mark_needed(&mut self, v: Var) {
        self.nodes[v.0].needed = true;
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(numel(&shape), value.len(), "op output size");
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Detached };
        self.nodes.push(Node {
            shape,
            value: Arc::new(value),
            op,
            requires_grad,
            needed: false,
            released: false,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- elementwise -----------------------------------------------------

    /// Dispatches an elementwise primitive; `b` is required for binary ops.
    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        match (op.is_binary(), b) {
            (true, Some(b)) => self.binary(op, a, b),
            (false, None) => Ok(self.unary(op, a)),
            (true, None) => Err(Error::invalid("elementwise", format!("{op:?} needs two operands"))),
            (false, Some(_)) => Err(Error::invalid("elementwise", format!("{op:?} takes one operand"))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Mul, a, b)
    }

    fn binary(&mut self, op: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| {
            Error::shape("elementwise", format!("{:?} cannot broadcast {} with {}", op, shape_str(&sa), shape_str(&sb)))
        })?;
        let value = binary_forward(op, self.value(a), &sa, self.value(b), &sb, &out_shape);
        if op == ElementwiseOp::Mul {
            self.mark_needed(a);
            self.mark_needed(b);
        }
        Ok(self.push(out_shape, value, Op::Binary { op, a, b }, &[a, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(ElementwiseOp::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(ElementwiseOp::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(ElementwiseOp::Exp, x)
    }

    /// Natural logarithm; non-positive inputs produce non-finite values.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(ElementwiseOp::Log, x)
    }

    fn unary(&mut self, op: ElementwiseOp, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let xs = self.value(x);
        let value = unary_forward(op, xs);
        let node = match op {
            ElementwiseOp::Relu => Op::Relu {
                x,
                mask: xs.iter().map(|&v| v > T::zero()).collect(),
            },
            ElementwiseOp::Log => {
                self.mark_needed(x);
                Op::Unary { op, x }
            }
            _ => Op::Unary { op, x },
        };
        let v = self.push(shape, value, node, &[x]);
        if matches!(op, ElementwiseOp::Sigmoid | ElementwiseOp::Exp) {
            self.mark_needed(v);
        }
        v
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let shape = self.shape(x).to_vec();
        let value = self.value(x).iter().map(|&v| v * factor).collect();
        self.push(shape, value, Op::Scale { x, factor }, &[x])
    }

    // ---- reductions and shape plumbing -------------------------------

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).iter().copied().sum();
        self.push(Vec::new(), vec![total], Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} out of range for {}", shape_str(&shape))));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let xs = self.value(x);
        let mut value = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut value[o * inner..(o + 1) * inner];
            for j in 0..n {
                let src = &xs[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push(out_shape, value, Op::SumAxis { x, n, inner }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(Error::shape(
                "reshape",
                format!("{} -> {}", shape_str(self.shape(x)), shape_str(shape)),
            ));
        }
        let value = Arc::clone(&self.nodes[x.0].value);
        assert!(!self.nodes[x.0].released, "reshape of released node");
        let requires_grad = self.nodes[x.0].requires_grad;
        self.nodes.push(Node {
            shape: shape.to_vec(),
            value,
            op: if requires_grad { Op::Reshape { x } } else { Op::Detached },
            requires_grad,
            needed: false,
            released: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Gathers `indices` along `axis` (indices may repeat).
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("index_select", format!("axis {axis} out of range for {}", shape_str(&shape))));
        }
        if indices.is_empty() {
            return Err(Error::invalid("index_select", "empty index list"));
        }
        let (outer, n_in, inner) = split_axis(&shape, axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_in) {
            return Err(Error::shape("index_select", format!("index {bad} out of range {n_in}")));
        }
        let xs = self.value(x);
        let mut value = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                value.extend_from_slice(&xs[(o * n_in + i) * inner..(o * n_in + i + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = indices.len();
        let op = Op::IndexSelect {
            x,
            n_in,
            inner,
            indices: indices.to_vec(),
        };
        Ok(self.push(out_shape, value, op, &[x]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {}", shape_str(&base))));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{} vs {}", shape_str(s), shape_str(&base))));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let widths: Vec<usize> = inputs.iter().map(|&v| self.shape(v)[axis] * inner).collect();
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &w) in inputs.iter().zip(&widths) {
                value.extend_from_slice(&self.value(v)[o * w..(o + 1) * w]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            widths,
        };
        Ok(self.push(out_shape, value, op, inputs))
    }

    // ---- linear algebra ----------------------------------------------------

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{} × {}", shape_str(&sa), shape_str(&sb))));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut value = vec![T::zero(); m * n];
        gemm(T::one(), MatRef::new(self.value(a), m, k), MatRef::new(self.value(b), k, n), T::zero(), &mut value);
        self.mark_needed(a);
        self.mark_needed(b);
        Ok(self.push(vec![m, n], value, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// Affine map over the trailing axis: `x[.., in] · wᵀ + b`, `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let fin = *sx.last().ok_or_else(|| Error::shape("linear", "scalar input"))?;
        if sw.len() != 2 || sw[1] != fin {
            return Err(Error::shape("linear", format!("input {} with weight {}", shape_str(&sx), shape_str(&sw))));
        }
        let fout = sw[0];
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(Error::shape("linear", format!("bias {} for {fout} outputs", shape_str(self.shape(b)))));
            }
        }
        let rows = numel(&sx) / fin;
        let mut value = vec![T::zero(); rows * fout];
        gemm(T::one(), MatRef::new(self.value(x), rows, fin), MatRef::new(self.value(w), fout, fin).t(), T::zero(), &mut value);
        if let Some(b) = b {
            let bias = self.value(b);
            for row in value.chunks_mut(fout) {
                for (v, &bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
        }
        self.mark_needed(x);
        self.mark_needed(w);
        let mut out_shape = sx;
        *out_shape.last_mut().expect("nonempty") = fout;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out_shape, value, Op::Linear { x, w, b, rows, fin, fout }, &inputs))
    }

    // ---- convolution and pooling ---------------------------------------

    /// 2D cross-correlation of `x[N×C×H×W]` with `w[O×C×KH×KW]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize), pad: (usize, usize)) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 {
            return Err(Error::shape("conv2d", format!("input {} weight {}", shape_str(&sx), shape_str(&sw))));
        }
        self.conv_nd("conv2d", x, w, b, [sx[0], sx[1], sx[2], sx[3]], [sw[0], sw[1], sw[2], sw[3]], stride, pad)
    }

    /// 1D cross-correlation of `x[N×C×L]` with `w[O×C×K]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 {
            return Err(Error::shape("conv1d", format!("input {} weight {}", shape_str(&sx), shape_str(&sw))));
        }
        let y = self.conv_nd("conv1d", x, w, b, [sx[0], sx[1], 1, sx[2]], [sw[0], sw[1], 1, sw[2]], (1, stride), (0, pad))?;
        let shape = self.shape(y).to_vec();
        // drop the unit height axis in place
        self.nodes[y.0].shape = vec![shape[0], shape[1], shape[3]];
        Ok(y)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_nd(
        &mut self,
        name: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        [n, c, h, wd]: [usize; 4],
        [o, wc, kh, kw]: [usize; 4],
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        if wc != c {
            return Err(Error::shape(name, format!("input has {c} channels, weight expects {wc}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape(name, format!("bias {} for {o} output channels", shape_str(self.shape(b)))));
            }
        }
        let oh = window_out_len(h, kh, stride.0, pad.0);
        let ow = window_out_len(wd, kw, stride.1, pad.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(name, format!("kernel {kh}×{kw} does not fit input {h}×{wd} with padding")));
        };
        let geom = ConvGeom { n, c, h, w: wd, o, kh, kw, sh: stride.0, sw: stride.1, ph: pad.0, pw: pad.1, oh, ow };
        let bias = b.map(|b| self.value(b));
        let value = conv_forward(&geom, self.value(x), self.value(w), bias);
        self.mark_needed(x);
        self.mark_needed(w);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(vec![n, o, oh, ow], value, Op::Conv { x, w, b, geom }, &inputs))
    }

    /// Square-window max pooling over `x[N×C×H×W]`.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("max_pool2d", format!("expected rank 4, got {}", shape_str(&s))));
        }
        if pad >= kernel {
            return Err(Error::invalid("max_pool2d", format!("padding {pad} must be smaller than kernel {kernel}")));
        }
        let (Some(oh), Some(ow)) = (window_out_len(s[2], kernel, stride, pad), window_out_len(s[3], kernel, stride, pad)) else {
            return Err(Error::shape("max_pool2d", "window does not fit"));
        };
        let geom = PoolGeom { planes: s[0] * s[1], h: s[2], w: s[3], k: kernel, s: stride, p: pad, oh, ow };
        let (value, arg) = max_pool2d_forward(&geom, self.value(x));
        Ok(self.push(vec![s[0], s[1], oh, ow], value, Op::MaxPool2d { x, geom, arg }, &[x]))
    }

    /// Average pooling along the trailing axis; padding counts as zeros.
    pub fn avg_pool1d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let len = *shape.last().ok_or_else(|| Error::shape("avg_pool1d", "scalar input"))?;
        let out_len = window_out_len(len, kernel, stride, pad)
            .ok_or_else(|| Error::shape("avg_pool1d", format!("kernel {kernel} does not fit length {len}")))?;
        let rows = numel(&shape) / len;
        let value = avg_pool1d_forward(rows, len, kernel, stride, pad, out_len, self.value(x));
        let mut out_shape = shape;
        *out_shape.last_mut().expect("nonempty") = out_len;
        let op = Op::AvgPool1d { x, len, k: kernel, s: stride, p: pad, out_len };
        Ok(self.push(out_shape, value, op, &[x]))
    }

    /// Adaptive average pooling of the trailing axis to `target` bins.
    pub fn adaptive_avg_pool1d(&mut self, x: Var, target: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let len = *shape.last().ok_or_else(|| Error::shape("adaptive_avg_pool1d", "scalar input"))?;
        if target == 0 || target > len {
            return Err(Error::invalid("adaptive_avg_pool1d", format!("target length {target} for input length {len}")));
        }
        let value = adaptive_avg_pool1d_forward(len, target, self.value(x));
        let mut out_shape = shape;
        *out_shape.last_mut().expect("nonempty") = target;
        Ok(self.push(out_shape, value, Op::AdaptiveAvgPool1d { x, len, target }, &[x]))
    }

    // ---- normalization -------------------------------------------------------

    /// Batch normalization of `x[N×C×…]` per channel, with affine `gain[C]`,
    /// `shift[C]`. Train mode uses batch statistics and updates `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        stats: &mut RunningStats<T>,
        mode: NormMode,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("batch_norm", format!("expected at least rank 2, got {}", shape_str(&shape))));
        }
        let (n, c) = (shape[0], shape[1]);
        let s = numel(&shape[2..]);
        if self.shape(gain) != [c] || self.shape(shift) != [c] || stats.mean.len() != c {
            return Err(Error::shape("batch_norm", format!("affine/statistics size does not match {c} channels")));
        }
        if mode == NormMode::Train && n < 2 {
            return Err(Error::invalid("batch_norm", "train mode needs a batch of at least 2"));
        }
        let fwd = batch_norm_forward(self.value(x), n, c, s, self.value(gain), self.value(shift), stats, mode, cfg);
        self.mark_needed(gain);
        let op = Op::BatchNorm { x, gain, shift, xhat: fwd.xhat, inv_std: fwd.inv_std, n, c, s, mode };
        Ok(self.push(shape, fwd.y, op, &[x, gain, shift]))
    }

    /// Z-scores `x` along the axis described by `layout`, then applies the
    /// indexed affine.
    pub fn standardize(&mut self, x: Var, layout: StandardizeLayout, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if layout.outer * layout.n * layout.inner != numel(&shape) || layout.affine_div == 0 {
            return Err(Error::shape("standardize", format!("layout {layout:?} does not cover {}", shape_str(&shape))));
        }
        if self.shape(gain) != [layout.affine_len] || self.shape(shift) != [layout.affine_len] {
            return Err(Error::shape("standardize", format!("affine must have {} entries", layout.affine_len)));
        }
        if layout.n < 2 {
            return Err(Error::invalid("standardize", "needs at least 2 values per statistic"));
        }
        let fwd = standardize_forward(self.value(x), &layout, self.value(gain), self.value(shift), eps);
        self.mark_needed(gain);
        let op = Op::Standardize { x, gain, shift, xhat: fwd.xhat, inv_std: fwd.inv_std, layout };
        Ok(self.push(shape, fwd.y, op, &[x, gain, shift]))
    }

    /// Layer normalization over the trailing feature axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let f = *shape.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if f < 2 {
            return Err(Error::invalid("layer_norm", "feature length must be at least 2"));
        }
        let layout = StandardizeLayout { outer: numel(&shape) / f, n: f, inner: 1, affine_div: 1, affine_len: f };
        self.standardize(x, layout, gain, shift, eps)
    }

    /// Task context normalization of `x[B×G×C×D]`: every `(b, c, d)` feature is
    /// z-scored across the `G` group values, then a per-channel affine shared
    /// by all groups is applied.
    pub fn tcn(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape("tcn", format!("expected [B×G×C×D], got {}", shape_str(&shape))));
        }
        let [b, g, c, d] = [shape[0], shape[1], shape[2], shape[3]];
        if g < 2 {
            return Err(Error::invalid("tcn", "context needs at least 2 groups"));
        }
        let layout = StandardizeLayout { outer: b, n: g, inner: c * d, affine_div: d, affine_len: c };
        self.standardize(x, layout, gain, shift, eps)
    }

    // ---- losses ----------------------------------------------------------------

    /// Log-softmax along the trailing axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| Error::shape("log_softmax", "scalar input"))?;
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let y = self.push(shape, value, Op::LogSoftmax { x, cols }, &[x]);
        self.mark_needed(y);
        Ok(y)
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let xs = self.value(logits);
        if xs.len() != targets.len() {
            return Err(Error::shape("bce_with_logits", format!("{} logits vs {} targets", xs.len(), targets.len())));
        }
        let total: T = xs
            .iter()
            .zip(targets)
            .map(|(&x, &t)| x.max(T::zero()) - x * t + (T::one() + (-x.abs()).exp()).ln())
            .sum();
        let value = total / T::lit(xs.len() as f64);
        self.mark_needed(logits);
        let op = Op::BceWithLogits { logits, targets: targets.to_vec() };
        Ok(self.push(Vec::new(), vec![value], op, &[logits]))
    }

    // ---- backward ------------------------------------------------------------

    /// Accumulates `∂loss/∂leaf` into every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {}", shape_str(self.shape(loss)))));
        }
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize_with(self.nodes.len(), || None);
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                accumulate(&mut self.leaf_grads[id], g);
                continue;
            }
            for (parent, pg) in self.backward_node(id, &g) {
                if self.nodes[parent.0].requires_grad {
                    accumulate(&mut grads[parent.0], pg);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, id: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[id];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::Detached => {}
            &Op::Binary { op, a, b } => {
                let (ga, gb) = binary_backward(
                    op,
                    g,
                    self.value_or_empty(a, op == ElementwiseOp::Mul),
                    self.shape(a),
                    self.value_or_empty(b, op == ElementwiseOp::Mul),
                    self.shape(b),
                    &node.shape,
                    (self.wants(a), self.wants(b)),
                );
                out.extend(ga.map(|v| (a, v)));
                out.extend(gb.map(|v| (b, v)));
            }
            Op::Relu { x, mask } => {
                let gx = g.iter().zip(mask).map(|(&gv, &m)| if m { gv } else { T::zero() }).collect();
                out.push((*x, gx));
            }
            &Op::Unary { op, x } => {
                let xs: &[T] = if op == ElementwiseOp::Log { self.value(x) } else { &[] };
                let ys: &[T] = if op == ElementwiseOp::Log { &[] } else { &node.value };
                let gx = match op {
                    ElementwiseOp::Sigmoid | ElementwiseOp::Exp => unary_backward(op, g, ys, ys),
                    _ => unary_backward(op, g, xs, xs),
                };
                out.push((x, gx));
            }
            &Op::Scale { x, factor } => out.push((x, g.iter().map(|&v| v * factor).collect())),
            &Op::Sum { x } => out.push((x, vec![g[0]; numel(self.shape(x))])),
            &Op::SumAxis { x, n, inner } => {
                let outer = g.len() / inner;
                let mut gx = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    for _ in 0..n {
                        gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                out.push((x, gx));
            }
            &Op::Reshape { x } => out.push((x, g.to_vec())),
            Op::IndexSelect { x, n_in, inner, indices } => {
                let (n_in, inner) = (*n_in, *inner);
                let outer = g.len() / (indices.len() * inner);
                let mut gx = vec![T::zero(); outer * n_in * inner];
                for o in 0..outer {
                    for (j, &i) in indices.iter().enumerate() {
                        let src = &g[(o * indices.len() + j) * inner..(o * indices.len() + j + 1) * inner];
                        let dst = &mut gx[(o * n_in + i) * inner..(o * n_in + i + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::Concat { inputs, widths } => {
                let row: usize = widths.iter().sum();
                let outer = g.len() / row;
                let mut parts: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(w * outer)).collect();
                for o in 0..outer {
                    let mut off = o * row;
                    for (p, &w) in parts.iter_mut().zip(widths) {
                        p.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                for (&v, p) in inputs.iter().zip(parts) {
                    if self.wants(v) {
                        out.push((v, p));
                    }
                }
            }
            &Op::MatMul { a, b, m, k, n } => {
                let gm = MatRef::new(g, m, n);
                if self.wants(a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(T::one(), gm, MatRef::new(self.value(b), k, n).t(), T::zero(), &mut ga);
                    out.push((a, ga));
                }
                if self.wants(b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(T::one(), MatRef::new(self.value(a), m, k).t(), gm, T::zero(), &mut gb);
                    out.push((b, gb));
                }
            }
            &Op::Linear { x, w, b, rows, fin, fout } => {
                let gm = MatRef::new(g, rows, fout);
                if self.wants(x) {
                    let mut gx = vec![T::zero(); rows * fin];
                    gemm(T::one(), gm, MatRef::new(self.value(w), fout, fin), T::zero(), &mut gx);
                    out.push((x, gx));
                }
                if self.wants(w) {
                    let mut gw = vec![T::zero(); fout * fin];
                    gemm(T::one(), gm.t(), MatRef::new(self.value(x), rows, fin), T::zero(), &mut gw);
                    out.push((w, gw));
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    let mut gb = vec![T::zero(); fout];
                    for row in g.chunks(fout) {
                        for (d, &v) in gb.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    out.push((b, gb));
                }
            }
            &Op::Conv { x, w, b, geom } => {
                let need = (self.wants(x), self.wants(w), b.is_some_and(|b| self.wants(b)));
                let grads = conv_backward(&geom, self.value(x), self.value(w), g, need);
                out.extend(grads.x.map(|v| (x, v)));
                out.extend(grads.w.map(|v| (w, v)));
                if let (Some(b), Some(gb)) = (b, grads.b) {
                    out.push((b, gb));
                }
            }
            Op::MaxPool2d { x, geom, arg } => out.push((*x, max_pool2d_backward(geom, arg, g))),
            &Op::AvgPool1d { x, len, k, s, p, out_len } => {
                out.push((x, avg_pool1d_backward(len, k, s, p, out_len, g)))
            }
            &Op::AdaptiveAvgPool1d { x, len, target } => {
                out.push((x, adaptive_avg_pool1d_backward(len, target, g)))
            }
            Op::BatchNorm { x, gain, shift, xhat, inv_std, n, c, s, mode } => {
                let grads = batch_norm_backward(g, xhat, inv_std, self.value(*gain), *n, *c, *s, *mode);
                out.push((*x, grads.x));
                out.push((*gain, grads.gain));
                out.push((*shift, grads.shift));
            }
            Op::Standardize { x, gain, shift, xhat, inv_std, layout } => {
                let grads = standardize_backward(g, xhat, inv_std, self.value(*gain), layout);
                out.push((*x, grads.x));
                out.push((*gain, grads.gain));
                out.push((*shift, grads.shift));
            }
            &Op::LogSoftmax { x, cols } => {
                let mut gx = vec![T::zero(); g.len()];
                for ((dst, grow), yrow) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(node.value.chunks(cols)) {
                    let total: T = grow.iter().copied().sum();
                    for ((d, &gv), &y) in dst.iter_mut().zip(grow).zip(yrow) {
                        *d = gv - y.exp() * total;
                    }
                }
                out.push((x, gx));
            }
            Op::BceWithLogits { logits, targets } => {
                let scale = g[0] / T::lit(targets.len() as f64);
                let gx = self
                    .value(*logits)
                    .iter()
                    .zip(targets)
                    .map(|(&x, &t)| (sigmoid(x) - t) * scale)
                    .collect();
                out.push((*logits, gx));
            }
        }
        out
    }

    fn value_or_empty(&self, v: Var, needed: bool) -> &[T] {
        if needed {
            self.value(v)
        } else {
            &[]
        }
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

/// `(outer, n, inner)` view of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}
