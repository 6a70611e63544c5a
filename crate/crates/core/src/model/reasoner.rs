//! Reasoner: three pathways blocks separated by average-pool bottlenecks,
//! followed by an MLP that maps each (context, candidate) stack to `z`.

use rand::Rng;

use super::config::{ModelConfig, EMBED_DIM, REASONER_DIM};
use super::encoder::conv_relu_bn;
use super::Trace;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Builder, Conv1d, ConvParams, Ctx, GroupConv, GroupPairConv, Linear};
use crate::tensor::{Real, Var};

const CHANNELS: usize = 32;
const POOLED: usize = 16;
const HIDDEN: usize = CHANNELS * POOLED;
/// Groups of the 32-channel group convolution (width 4).
const GROUPS_GC: usize = 8;
/// Groups of the 32-channel group-pair convolution (width 8, pairs of 16).
const GROUPS_GPC: usize = 4;

/// One convolution followed by ReLU and batch norm.
#[derive(Clone, Debug)]
struct Stage<C> {
    conv: C,
    bn: BatchNorm,
}

trait Apply {
    fn apply<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var>;
}

impl Apply for Conv1d {
    fn apply<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.forward(cx, x)
    }
}

impl Apply for GroupConv {
    fn apply<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.forward(cx, x)
    }
}

impl Apply for GroupPairConv {
    fn apply<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.forward(cx, x)
    }
}

/// Runs a chain of stages; the input itself is left to the caller.
fn run_stages<T: Real, C: Apply>(cx: &mut Ctx<'_, T>, stages: &[Stage<C>], x: Var) -> Result<Var> {
    let mut h = x;
    for stage in stages {
        let c = stage.conv.apply(cx, h)?;
        if h != x {
            cx.tape.release(h);
        }
        h = conv_relu_bn(cx, c, &stage.bn)?;
    }
    Ok(h)
}

/// Input batch norm and up to four parallel pathways whose outputs are summed.
#[derive(Clone, Debug)]
struct PathwaysBlock {
    input_bn: BatchNorm,
    pointwise: Option<Conv1d>,
    local: Vec<Stage<Conv1d>>,
    group: Vec<Stage<GroupConv>>,
    pair: Vec<Stage<GroupPairConv>>,
}

impl PathwaysBlock {
    /// `first` selects the single-stage block over the stacked panel channels;
    /// later blocks stack two stages per pathway over 32 channels.
    fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, cfg: &ModelConfig, first: bool) -> Self {
        let (in_ch, stages, gc_groups, gpc_groups) = if first {
            let g = cfg.first_layer_groups;
            (cfg.reasoner_channels(), 1, g, g)
        } else {
            (CHANNELS, 2, GROUPS_GC, GROUPS_GPC)
        };
        let tcn = (!cfg.ablation.tcn).then_some(cfg.tcn_mode);
        let with_p12 = !cfg.ablation.p1p2;
        let with_p34 = !cfg.ablation.p3p4;

        let input_bn = BatchNorm::new(b, &format!("{name}.input_bn"), in_ch);
        let pointwise = with_p12.then(|| {
            Conv1d::new(b, &format!("{name}.p1.conv"), ConvParams::new(in_ch, CHANNELS, 1, 1, 0).without_bias())
        });
        let mut local = Vec::new();
        let mut group = Vec::new();
        let mut pair = Vec::new();
        for s in 0..stages {
            let c_in = if s == 0 { in_ch } else { CHANNELS };
            if with_p12 {
                let n = format!("{name}.p2.stage{}", s + 1);
                local.push(Stage {
                    conv: Conv1d::new(b, &format!("{n}.conv"), ConvParams::new(c_in, CHANNELS, 7, 1, 3)),
                    bn: BatchNorm::new(b, &format!("{n}.bn"), CHANNELS),
                });
            }
        }
        if with_p34 {
            for s in 0..stages {
                let c_in = if s == 0 { in_ch } else { CHANNELS };
                let groups = if s == 0 { gc_groups } else { GROUPS_GC };
                let n = format!("{name}.p3.stage{}", s + 1);
                group.push(Stage {
                    conv: GroupConv::new(b, &n, ConvParams::new(c_in / groups, CHANNELS, 7, 1, 3), groups, tcn),
                    bn: BatchNorm::new(b, &format!("{n}.bn"), CHANNELS),
                });
            }
            for s in 0..stages {
                let c_in = if s == 0 { in_ch } else { CHANNELS };
                let groups = if s == 0 { gpc_groups } else { GROUPS_GPC };
                let n = format!("{name}.p4.stage{}", s + 1);
                pair.push(Stage {
                    conv: GroupPairConv::new(b, &n, ConvParams::new(2 * c_in / groups, CHANNELS, 7, 1, 3), groups, tcn),
                    bn: BatchNorm::new(b, &format!("{n}.bn"), CHANNELS),
                });
            }
        }
        PathwaysBlock {
            input_bn,
            pointwise,
            local,
            group,
            pair,
        }
    }

    fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.input_bn.forward(cx, x)?;
        let mut outputs = Vec::with_capacity(4);
        if let Some(p1) = &self.pointwise {
            outputs.push(p1.forward(cx, h)?);
        }
        if !self.local.is_empty() {
            outputs.push(run_stages(cx, &self.local, h)?);
        }
        if !self.group.is_empty() {
            outputs.push(run_stages(cx, &self.group, h)?);
        }
        if !self.pair.is_empty() {
            outputs.push(run_stages(cx, &self.pair, h)?);
        }
        cx.tape.release(h);
        let mut acc = outputs[0];
        for &o in &outputs[1..] {
            let next = cx.tape.add(acc, o)?;
            cx.tape.release(acc);
            cx.tape.release(o);
            acc = next;
        }
        Ok(acc)
    }
}

#[derive(Clone, Debug)]
pub struct Reasoner {
    channels: usize,
    block1: PathwaysBlock,
    block2: PathwaysBlock,
    block3: PathwaysBlock,
    hidden: Linear,
    hidden_bn: BatchNorm,
    out: Linear,
}

impl Reasoner {
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Self {
        Reasoner {
            channels: cfg.reasoner_channels(),
            block1: PathwaysBlock::new(b, "reasoner.block1", cfg, true),
            block2: PathwaysBlock::new(b, "reasoner.block2", cfg, false),
            block3: PathwaysBlock::new(b, "reasoner.block3", cfg, false),
            hidden: Linear::new(b, "reasoner.head.hidden", HIDDEN, HIDDEN),
            hidden_bn: BatchNorm::new(b, "reasoner.head.bn", HIDDEN),
            out: Linear::new(b, "reasoner.head.out", HIDDEN, REASONER_DIM),
        }
    }

    /// Maps stacked embeddings `[N×(n_c+1)×825]` to `z[N×128]`.
    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var, trace: &mut Trace) -> Result<Var> {
        let shape = cx.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.channels || shape[2] != EMBED_DIM {
            return Err(Error::shape(
                "reason",
                format!("expected [N×{}×{EMBED_DIM}], got {shape:?}", self.channels),
            ));
        }
        let n = shape[0];
        let h1 = self.block1.forward(cx, x)?;
        trace.push(("reasoner.block1", cx.tape.shape(h1).to_vec()));
        let p1 = cx.tape.avg_pool1d(h1, 10, 8, 1)?;
        cx.tape.release(h1);
        trace.push(("reasoner.bottleneck1", cx.tape.shape(p1).to_vec()));
        let h2 = self.block2.forward(cx, p1)?;
        cx.tape.release(p1);
        let p2 = cx.tape.avg_pool1d(h2, 6, 4, 1)?;
        cx.tape.release(h2);
        trace.push(("reasoner.bottleneck2", cx.tape.shape(p2).to_vec()));
        let h3 = self.block3.forward(cx, p2)?;
        cx.tape.release(p2);
        let pooled = cx.tape.adaptive_avg_pool1d(h3, POOLED)?;
        cx.tape.release(h3);
        trace.push(("reasoner.adaptive_pool", cx.tape.shape(pooled).to_vec()));

        let flat = cx.tape.reshape(pooled, &[n, HIDDEN])?;
        let hid = self.hidden.forward(cx, flat)?;
        cx.tape.release(pooled);
        cx.tape.release(flat);
        let hid = conv_relu_bn(cx, hid, &self.hidden_bn)?;
        let z = self.out.forward(cx, hid)?;
        cx.tape.release(hid);
        trace.push(("reasoner.z", cx.tape.shape(z).to_vec()));
        Ok(z)
    }
}
