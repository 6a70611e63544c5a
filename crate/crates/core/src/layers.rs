//! Parameterized layers built on the tape primitives.
//!
//! Each layer owns parameter ids into a [`ParamStore`] (and, for batch norm, a
//! [`StatsStore`] slot) and is applied through a [`Ctx`] that carries the tape,
//! the stores and the normalization mode.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, StatsId, StatsStore};
use crate::tensor::{BatchNormConfig, NormMode, Real, StandardizeLayout, Tape, Tensor, Var};

/// LayerNorm and TCN epsilon.
pub const NORM_EPS: f64 = 1e-5;

/// Everything a layer needs during a forward pass.
pub struct Ctx<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a ParamStore<T>,
    pub stats: &'a mut StatsStore<T>,
    pub mode: NormMode,
}

impl<T: Real> Ctx<'_, T> {
    pub fn param(&mut self, id: ParamId) -> Var {
        self.params.bind(self.tape, id)
    }
}

/// Parameter construction with the conventional initializers.
pub struct Builder<'a, T: Real, R: Rng> {
    pub params: &'a mut ParamStore<T>,
    pub stats: &'a mut StatsStore<T>,
    pub rng: &'a mut R,
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    /// `U(−1/√fan_in, 1/√fan_in)`.
    pub fn fan_in_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(self.rng.gen_range(-bound..bound))).collect();
        self.params.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.params.add(name, Tensor::full(shape.to_vec(), T::lit(value)))
    }

    pub fn gaussian(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let normal = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(normal.sample(self.rng))).collect();
        self.params.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }
}

/// Hyperparameters of a convolution, in the
/// `[in → out, kernel, stride, padding]` notation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvParams {
    pub const fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvParams {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias: true,
        }
    }

    pub const fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    /// `floor((len + 2·pad − k) / stride) + 1`.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        crate::tensor::window_out_len(len, self.kernel, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub params: ConvParams,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Conv1d {
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, p: ConvParams) -> Self {
        let fan_in = p.in_channels * p.kernel;
        let weight = b.fan_in_uniform(&format!("{name}.weight"), &[p.out_channels, p.in_channels, p.kernel], fan_in);
        let bias = p.bias.then(|| b.fan_in_uniform(&format!("{name}.bias"), &[p.out_channels], fan_in));
        Conv1d { params: p, weight, bias }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        cx.tape.conv1d(x, w, b, self.params.stride, self.params.padding)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub params: ConvParams,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, p: ConvParams) -> Self {
        let fan_in = p.in_channels * p.kernel * p.kernel;
        let weight = b.fan_in_uniform(
            &format!("{name}.weight"),
            &[p.out_channels, p.in_channels, p.kernel, p.kernel],
            fan_in,
        );
        let bias = p.bias.then(|| b.fan_in_uniform(&format!("{name}.bias"), &[p.out_channels], fan_in));
        Conv2d { params: p, weight, bias }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        let s = self.params.stride;
        let p = self.params.padding;
        cx.tape.conv2d(x, w, b, (s, s), (p, p))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, in_features: usize, out_features: usize) -> Self {
        let weight = b.fan_in_uniform(&format!("{name}.weight"), &[out_features, in_features], in_features);
        let bias = b.fan_in_uniform(&format!("{name}.bias"), &[out_features], in_features);
        Linear {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight);
        let b = cx.param(self.bias);
        cx.tape.linear(x, w, Some(b))
    }
}

/// Batch normalization over axis 1 of `[N×C×…]`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    pub config: BatchNormConfig,
    gain: ParamId,
    shift: ParamId,
    stats: StatsId,
}

impl BatchNorm {
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, channels: usize) -> Self {
        BatchNorm {
            channels,
            config: BatchNormConfig::default(),
            gain: b.constant(&format!("{name}.gain"), &[channels], 1.0),
            shift: b.constant(&format!("{name}.shift"), &[channels], 0.0),
            stats: b.stats.add(name, channels),
        }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = cx.param(self.gain);
        let s = cx.param(self.shift);
        let stats = cx.stats.get_mut(self.stats);
        cx.tape.batch_norm(x, g, s, stats, cx.mode, self.config)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub features: usize,
    gain: ParamId,
    shift: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, features: usize) -> Self {
        LayerNorm {
            features,
            gain: b.constant(&format!("{name}.gain"), &[features], 1.0),
            shift: b.constant(&format!("{name}.shift"), &[features], 0.0),
        }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = cx.param(self.gain);
        let s = cx.param(self.shift);
        cx.tape.layer_norm(x, g, s, NORM_EPS)
    }
}

/// Which values a task context normalization standardizes together.
///
/// Followed by a sum over groups, as in group and group-pair convolution,
/// `AcrossGroups` cancels exactly: the z-scores of every feature sum to zero
/// over the groups, leaving only `groups · shift`. `WithinGroup` is therefore
/// the default for the convolution layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TcnMode {
    /// Each `(channel, position)` feature is z-scored across the groups.
    AcrossGroups,
    /// Each group's output is z-scored over its own channels and positions.
    #[default]
    WithinGroup,
}

impl TcnMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TcnMode::AcrossGroups => "across-groups",
            TcnMode::WithinGroup => "within-group",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "across-groups" => Some(TcnMode::AcrossGroups),
            "within-group" => Some(TcnMode::WithinGroup),
            _ => None,
        }
    }
}

/// Task context normalization over `[B×G×C×D]` with a per-channel affine
/// shared by all groups.
#[derive(Clone, Debug)]
pub struct Tcn {
    pub channels: usize,
    pub mode: TcnMode,
    gain: ParamId,
    shift: ParamId,
}

impl Tcn {
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, channels: usize, mode: TcnMode) -> Self {
        Tcn {
            channels,
            mode,
            gain: b.constant(&format!("{name}.gain"), &[channels], 1.0),
            shift: b.constant(&format!("{name}.shift"), &[channels], 0.0),
        }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = cx.param(self.gain);
        let s = cx.param(self.shift);
        match self.mode {
            TcnMode::AcrossGroups => cx.tape.tcn(x, g, s, NORM_EPS),
            TcnMode::WithinGroup => {
                let shape = cx.tape.shape(x).to_vec();
                if shape.len() != 4 {
                    return Err(Error::shape("tcn", "expected [B×G×C×D]"));
                }
                let (c, d) = (shape[2], shape[3]);
                let layout = StandardizeLayout {
                    outer: shape[0] * shape[1],
                    n: c * d,
                    inner: 1,
                    affine_div: d,
                    affine_len: c,
                };
                cx.tape.standardize(x, layout, g, s, NORM_EPS)
            }
        }
    }
}

/// Channel order of the cyclic group pairs: pair `i` is group `i` followed by
/// group `(i + 1) mod n`. Two groups form a single pair.
pub fn pair_channel_indices(channels: usize, groups: usize) -> Vec<usize> {
    let width = channels / groups;
    let pairs = if groups == 2 { 1 } else { groups };
    let mut idx = Vec::with_capacity(pairs * 2 * width);
    for i in 0..pairs {
        for g in [i, (i + 1) % groups] {
            idx.extend(g * width..(g + 1) * width);
        }
    }
    idx
}

fn check_groups(op: &'static str, channels: usize, groups: usize) -> Result<()> {
    if groups == 0 || channels % groups != 0 {
        return Err(Error::invalid(op, format!("{channels} channels are not divisible into {groups} groups")));
    }
    Ok(())
}

/// Applies one shared convolution to `[B×G×W×D]` groups, then optional TCN
/// across the group axis, then sums the groups.
fn shared_conv_and_sum<T: Real>(
    cx: &mut Ctx<'_, T>,
    conv: &Conv1d,
    tcn: Option<&Tcn>,
    grouped: Var,
    batch: usize,
    groups: usize,
) -> Result<Var> {
    let y = conv.forward(cx, grouped)?;
    let s = cx.tape.shape(y).to_vec();
    let stacked = cx.tape.reshape(y, &[batch, groups, s[1], s[2]])?;
    cx.tape.release(y);
    let normed = match tcn {
        Some(tcn) => {
            let n = tcn.forward(cx, stacked)?;
            cx.tape.release(stacked);
            n
        }
        None => stacked,
    };
    let out = cx.tape.sum_axis(normed, 1)?;
    cx.tape.release(normed);
    Ok(out)
}

/// Group convolution: channels are split into `groups` contiguous groups,
/// every group goes through the same convolution, and the results are summed.
#[derive(Clone, Debug)]
pub struct GroupConv {
    pub groups: usize,
    pub conv: Conv1d,
    pub tcn: Option<Tcn>,
}

impl GroupConv {
    /// `p.in_channels` is the width of a single group.
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, p: ConvParams, groups: usize, tcn: Option<TcnMode>) -> Self {
        let conv = Conv1d::new(b, &format!("{name}.conv"), p);
        let tcn = tcn.map(|mode| Tcn::new(b, &format!("{name}.tcn"), p.out_channels, mode));
        GroupConv { groups, conv, tcn }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = cx.tape.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("group_conv", "expected [B×C×D]"));
        }
        check_groups("group_conv", s[1], self.groups)?;
        let width = s[1] / self.groups;
        if width != self.conv.params.in_channels {
            return Err(Error::shape(
                "group_conv",
                format!("group width {width} but shared conv expects {}", self.conv.params.in_channels),
            ));
        }
        let grouped = cx.tape.reshape(x, &[s[0] * self.groups, width, s[2]])?;
        shared_conv_and_sum(cx, &self.conv, self.tcn.as_ref(), grouped, s[0], self.groups)
    }
}

/// Group-pair convolution: cyclic pairs of groups are concatenated along the
/// channel axis, pass through one shared convolution, and are summed.
#[derive(Clone, Debug)]
pub struct GroupPairConv {
    pub groups: usize,
    pub conv: Conv1d,
    pub tcn: Option<Tcn>,
}

impl GroupPairConv {
    /// `p.in_channels` is the width of a pair (twice the group width). A
    /// single pair (two groups) has no context to normalize across, so no
    /// across-group TCN is created for it.
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, p: ConvParams, groups: usize, tcn: Option<TcnMode>) -> Self {
        let conv = Conv1d::new(b, &format!("{name}.conv"), p);
        let tcn = tcn
            .filter(|&m| m == TcnMode::WithinGroup || Self::pair_count(groups) > 1)
            .map(|mode| Tcn::new(b, &format!("{name}.tcn"), p.out_channels, mode));
        GroupPairConv { groups, conv, tcn }
    }

    pub fn pair_count(groups: usize) -> usize {
        if groups == 2 {
            1
        } else {
            groups
        }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = cx.tape.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("group_pair_conv", "expected [B×C×D]"));
        }
        if self.groups < 2 {
            return Err(Error::invalid("group_pair_conv", "needs at least 2 groups"));
        }
        check_groups("group_pair_conv", s[1], self.groups)?;
        let width = 2 * (s[1] / self.groups);
        if width != self.conv.params.in_channels {
            return Err(Error::shape(
                "group_pair_conv",
                format!("pair width {width} but shared conv expects {}", self.conv.params.in_channels),
            ));
        }
        let pairs = Self::pair_count(self.groups);
        let idx = pair_channel_indices(s[1], self.groups);
        let gathered = cx.tape.index_select(x, 1, &idx)?;
        let grouped = cx.tape.reshape(gathered, &[s[0] * pairs, width, s[2]])?;
        shared_conv_and_sum(cx, &self.conv, self.tcn.as_ref(), grouped, s[0], pairs)
    }
}
