//! Panel encoder: two convolution/pooling blocks, a per-channel linear map,
//! a residual MLP and a learned position embedding per grid slot.

use rand::Rng;

use super::config::{CONTENT_DIM, EMBED_DIM, IMAGE_SIZE, POSITION_DIM};
use super::Trace;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Builder, Conv2d, ConvParams, Ctx, LayerNorm, Linear};
use crate::params::ParamId;
use crate::tensor::{Real, Var};

const CHANNELS: usize = 32;
const SPATIAL: usize = 25;
const HIDDEN: usize = 2 * CONTENT_DIM;

/// Strided convolution pathway plus a max-pool shortcut, summed.
#[derive(Clone, Debug)]
struct Block {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Conv2d,
}

impl Block {
    fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, in_channels: usize) -> Self {
        Block {
            conv1: Conv2d::new(b, &format!("{name}.conv1"), ConvParams::new(in_channels, CHANNELS, 7, 2, 3)),
            bn1: BatchNorm::new(b, &format!("{name}.bn1"), CHANNELS),
            conv2: Conv2d::new(b, &format!("{name}.conv2"), ConvParams::new(CHANNELS, CHANNELS, 7, 2, 3)),
            bn2: BatchNorm::new(b, &format!("{name}.bn2"), CHANNELS),
            shortcut: Conv2d::new(b, &format!("{name}.shortcut"), ConvParams::new(in_channels, CHANNELS, 1, 1, 0)),
        }
    }

    fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var, trace: &mut Trace, label: &'static str) -> Result<Var> {
        let a = self.conv1.forward(cx, x)?;
        trace.push((label, cx.tape.shape(a).to_vec()));
        let a = conv_relu_bn(cx, a, &self.bn1)?;
        let b = self.conv2.forward(cx, a)?;
        cx.tape.release(a);
        let b = conv_relu_bn(cx, b, &self.bn2)?;

        let p = cx.tape.max_pool2d(x, 3, 2, 1)?;
        let q = cx.tape.max_pool2d(p, 3, 2, 1)?;
        cx.tape.release(p);
        let s = self.shortcut.forward(cx, q)?;
        cx.tape.release(q);

        let out = cx.tape.add(b, s)?;
        cx.tape.release(b);
        cx.tape.release(s);
        Ok(out)
    }
}

/// ReLU then batch norm, releasing the intermediates.
pub(super) fn conv_relu_bn<T: Real>(cx: &mut Ctx<'_, T>, conv_out: Var, bn: &BatchNorm) -> Result<Var> {
    let r = cx.tape.relu(conv_out);
    cx.tape.release(conv_out);
    let y = bn.forward(cx, r)?;
    cx.tape.release(r);
    Ok(y)
}

#[derive(Clone, Debug)]
pub struct Encoder {
    block1: Block,
    block2: Block,
    per_channel: Linear,
    norm_in: LayerNorm,
    expand: Linear,
    norm_hidden: LayerNorm,
    contract: Linear,
    position: ParamId,
    slots: usize,
}

impl Encoder {
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, slots: usize) -> Self {
        Encoder {
            block1: Block::new(b, "encoder.block1", 1),
            block2: Block::new(b, "encoder.block2", CHANNELS),
            per_channel: Linear::new(b, "encoder.channel_linear", SPATIAL, SPATIAL),
            norm_in: LayerNorm::new(b, "encoder.mlp.norm1", CONTENT_DIM),
            expand: Linear::new(b, "encoder.mlp.expand", CONTENT_DIM, HIDDEN),
            norm_hidden: LayerNorm::new(b, "encoder.mlp.norm2", HIDDEN),
            contract: Linear::new(b, "encoder.mlp.contract", HIDDEN, CONTENT_DIM),
            position: b.gaussian("encoder.position", &[slots, POSITION_DIM], 0.02),
            slots,
        }
    }

    /// Embeds `images[P×1×80×80]`; panel `p` receives the position embedding
    /// of `slots[p]`. Returns `[P×825]`.
    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, images: Var, slots: &[usize], trace: &mut Trace) -> Result<Var> {
        let shape = cx.tape.shape(images).to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != IMAGE_SIZE || shape[3] != IMAGE_SIZE {
            return Err(Error::shape(
                "encode_panel",
                format!("expected [P×1×{IMAGE_SIZE}×{IMAGE_SIZE}] images, got {shape:?}"),
            ));
        }
        let p = shape[0];
        if slots.len() != p {
            return Err(Error::shape("encode_panel", format!("{} slot indices for {p} panels", slots.len())));
        }
        if let Some(&bad) = slots.iter().find(|&&s| s >= self.slots) {
            return Err(Error::invalid("encode_panel", format!("slot {bad} out of range 0..{}", self.slots)));
        }

        let h1 = self.block1.forward(cx, images, trace, "encoder.block1.conv1")?;
        trace.push(("encoder.block1", cx.tape.shape(h1).to_vec()));
        let h2 = self.block2.forward(cx, h1, trace, "encoder.block2.conv1")?;
        cx.tape.release(h1);
        trace.push(("encoder.block2", cx.tape.shape(h2).to_vec()));

        let rows = cx.tape.reshape(h2, &[p, CHANNELS, SPATIAL])?;
        let lin = self.per_channel.forward(cx, rows)?;
        cx.tape.release(h2);
        cx.tape.release(rows);
        let act = cx.tape.relu(lin);
        cx.tape.release(lin);
        let flat = cx.tape.reshape(act, &[p, CONTENT_DIM])?;

        let n1 = self.norm_in.forward(cx, flat)?;
        let e = self.expand.forward(cx, n1)?;
        cx.tape.release(n1);
        let e_act = cx.tape.relu(e);
        cx.tape.release(e);
        let n2 = self.norm_hidden.forward(cx, e_act)?;
        cx.tape.release(e_act);
        let c = self.contract.forward(cx, n2)?;
        cx.tape.release(n2);
        let content = cx.tape.add(flat, c)?;
        cx.tape.release(c);
        cx.tape.release(act);
        cx.tape.release(flat);

        let table = cx.param(self.position);
        let pos = cx.tape.index_select(table, 0, slots)?;
        let out = cx.tape.concat(&[content, pos], 1)?;
        cx.tape.release(content);
        cx.tape.release(pos);
        debug_assert_eq!(cx.tape.shape(out), &[p, EMBED_DIM]);
        trace.push(("encoder.embedding", cx.tape.shape(out).to_vec()));
        Ok(out)
    }
}
