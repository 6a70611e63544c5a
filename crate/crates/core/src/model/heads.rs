//! Answer scoring and the two rule-prediction heads.

use rand::Rng;

use super::config::REASONER_DIM;
use crate::error::{Error, Result};
use crate::layers::{Builder, Ctx, Linear};
use crate::tensor::{Real, Var};

#[derive(Clone, Debug)]
pub struct Heads {
    pub target_hidden: Linear,
    pub target_out: Linear,
    pub aggregate_hidden: Linear,
    pub aggregate_out: Linear,
    pub conditioned_out: Linear,
}

impl Heads {
    pub fn new<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, rule_dim: usize) -> Self {
        Heads {
            target_hidden: Linear::new(b, "heads.target.hidden", REASONER_DIM, REASONER_DIM),
            target_out: Linear::new(b, "heads.target.out", REASONER_DIM, 1),
            aggregate_hidden: Linear::new(b, "heads.aggregate.hidden", REASONER_DIM, REASONER_DIM),
            aggregate_out: Linear::new(b, "heads.aggregate.out", REASONER_DIM, rule_dim),
            conditioned_out: Linear::new(b, "heads.conditioned.out", REASONER_DIM, rule_dim),
        }
    }

    /// One score per candidate: `z[…×128]` to `[…×1]`.
    pub fn target<T: Real>(&self, cx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        let h = self.target_hidden.forward(cx, z)?;
        let a = cx.tape.relu(h);
        cx.tape.release(h);
        let s = self.target_out.forward(cx, a)?;
        cx.tape.release(a);
        Ok(s)
    }

    /// Rule logits from the sum of all candidate embeddings `z[B×n_a×128]`.
    pub fn aggregate<T: Real>(&self, cx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        check_candidates(cx, z)?;
        let s = cx.tape.sum_axis(z, 1)?;
        let h = self.aggregate_hidden.forward(cx, s)?;
        cx.tape.release(s);
        let a = cx.tape.relu(h);
        cx.tape.release(h);
        let r = self.aggregate_out.forward(cx, a)?;
        cx.tape.release(a);
        Ok(r)
    }

    /// Rule logits from the softmax(`scores`)-weighted sum of `z[B×n_a×128]`.
    pub fn conditioned<T: Real>(&self, cx: &mut Ctx<'_, T>, z: Var, scores: Var) -> Result<Var> {
        let (b, n) = check_candidates(cx, z)?;
        if cx.tape.shape(scores) != [b, n] {
            return Err(Error::shape(
                "predict_rules_conditioned",
                format!("{:?} scores for {b}×{n} candidates", cx.tape.shape(scores)),
            ));
        }
        let log_p = cx.tape.log_softmax(scores)?;
        let p = cx.tape.exp(log_p);
        let w = cx.tape.reshape(p, &[b, n, 1])?;
        let weighted = cx.tape.mul(z, w)?;
        let pooled = cx.tape.sum_axis(weighted, 1)?;
        cx.tape.release(weighted);
        let r = self.conditioned_out.forward(cx, pooled)?;
        cx.tape.release(pooled);
        Ok(r)
    }
}

fn check_candidates<T: Real>(cx: &Ctx<'_, T>, z: Var) -> Result<(usize, usize)> {
    match *cx.tape.shape(z) {
        [b, n, REASONER_DIM] if n > 0 => Ok((b, n)),
        ref s => Err(Error::shape("rule_head", format!("expected [B×n_a×{REASONER_DIM}] with n_a > 0, got {s:?}"))),
    }
}
