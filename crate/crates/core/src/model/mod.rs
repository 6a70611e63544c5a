//! The full network: panel encoder, reasoner, answer and rule heads, and the
//! joint training loss.

mod checkpoint;
mod config;
mod encoder;
mod gradcheck;
mod heads;
mod reasoner;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{Ablation, ModelConfig, CONTENT_DIM, EMBED_DIM, IMAGE_SIZE, POSITION_DIM, REASONER_DIM};
pub use encoder::Encoder;
pub use gradcheck::{gradcheck_model, GradCheckReport, ParamProbe, MODEL_GRAD_STEPS};
pub use heads::Heads;
pub use reasoner::Reasoner;

use crate::error::{Error, Result};
use crate::layers::{Builder, Ctx};
use crate::params::{ParamStore, StatsStore};
use crate::tensor::{NormMode, Real, Tape, Tensor, Var};

/// `(stage label, output shape)` in the order the stages ran.
pub type Trace = Vec<(&'static str, Vec<usize>)>;

/// Handles produced by [`Pong::forward`].
#[derive(Clone, Debug)]
pub struct Outputs {
    /// Answer scores before softmax, `[B×n_a]`.
    pub answers: Var,
    /// Aggregate-head rule logits, `[B×d_r]`.
    pub rules_aggregate: Var,
    /// Target-conditioned rule logits, `[B×d_r]`.
    pub rules_conditioned: Var,
    /// Reasoner output per candidate, `[B×n_a×128]`.
    pub z: Var,
    /// Panel embeddings, `[B·n×825]`.
    pub embeddings: Var,
    pub trace: Trace,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub bce_aggregate: Var,
    pub bce_conditioned: Var,
}

/// Detached outputs of an evaluation-mode forward pass.
#[derive(Clone, Debug)]
pub struct Prediction<T: Real> {
    pub answers: Tensor<T>,
    pub rules_aggregate: Tensor<T>,
    pub rules_conditioned: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Pong<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub stats: StatsStore<T>,
    encoder: Encoder,
    reasoner: Reasoner,
    heads: Heads,
}

impl<T: Real> Pong<T> {
    /// Builds a freshly initialized model. Initial values are drawn in double
    /// precision, so models of either precision built from one seed agree.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut stats = StatsStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: &mut params,
            stats: &mut stats,
            rng: &mut rng,
        };
        let encoder = Encoder::new(&mut b, config.n_context + 1);
        let reasoner = Reasoner::new(&mut b, &config);
        let heads = Heads::new(&mut b, config.rule_dim);
        Ok(Pong {
            config,
            params,
            stats,
            encoder,
            reasoner,
            heads,
        })
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn heads(&self) -> &Heads {
        &self.heads
    }

    pub fn cast<U: Real>(&self) -> Pong<U> {
        Pong {
            config: self.config.clone(),
            params: self.params.cast(),
            stats: self.stats.cast(),
            encoder: self.encoder.clone(),
            reasoner: self.reasoner.clone(),
            heads: self.heads.clone(),
        }
    }

    /// Grid slot of every panel of one instance: context panels in reading
    /// order, then every candidate in the missing slot.
    pub fn panel_slots(&self) -> Vec<usize> {
        let nc = self.config.n_context;
        (0..nc).chain(std::iter::repeat(nc).take(self.config.n_answers)).collect()
    }

    /// Full forward pass over `images[B×n×80×80]`.
    pub fn forward(&mut self, tape: &mut Tape<T>, images: Var, mode: NormMode) -> Result<Outputs> {
        let cfg = &self.config;
        let (nc, na, n) = (cfg.n_context, cfg.n_answers, cfg.n_panels());
        let shape = tape.shape(images).to_vec();
        let size = cfg.image_size;
        if shape.len() != 4 || shape[1] != n || shape[2] != size || shape[3] != size {
            return Err(Error::shape(
                "forward",
                format!("expected [B×{n}×{size}×{size}] panels, got {shape:?}"),
            ));
        }
        let b = shape[0];
        let slots: Vec<usize> = (0..b).flat_map(|_| self.panel_slots()).collect();
        let mut trace = Trace::new();
        let mut cx = Ctx {
            tape,
            params: &self.params,
            stats: &mut self.stats,
            mode,
        };

        let flat = cx.tape.reshape(images, &[b * n, 1, size, size])?;
        let emb = self.encoder.forward(&mut cx, flat, &slots, &mut trace)?;
        cx.tape.release(flat);

        let mut rows = Vec::with_capacity(b * na * (nc + 1));
        for bi in 0..b {
            for k in 0..na {
                rows.extend(bi * n..bi * n + nc);
                rows.push(bi * n + nc + k);
            }
        }
        let gathered = cx.tape.index_select(emb, 0, &rows)?;
        let stacked = cx.tape.reshape(gathered, &[b * na, nc + 1, EMBED_DIM])?;
        let z = self.reasoner.forward(&mut cx, stacked, &mut trace)?;
        cx.tape.release(gathered);
        cx.tape.release(stacked);

        let scores = self.heads.target(&mut cx, z)?;
        let answers = cx.tape.reshape(scores, &[b, na])?;
        let z = cx.tape.reshape(z, &[b, na, REASONER_DIM])?;
        let rules_aggregate = self.heads.aggregate(&mut cx, z)?;
        let rules_conditioned = self.heads.conditioned(&mut cx, z, answers)?;
        Ok(Outputs {
            answers,
            rules_aggregate,
            rules_conditioned,
            z,
            embeddings: emb,
            trace,
        })
    }

    /// `CE + β·BCE(aggregate) + γ·BCE(conditioned)`, each averaged over the
    /// batch; the BCE terms also average over rule coordinates.
    pub fn loss(&self, tape: &mut Tape<T>, out: &Outputs, targets: &[usize], rules: &[T]) -> Result<LossTerms> {
        let cfg = &self.config;
        let b = tape.shape(out.answers)[0];
        if targets.len() != b {
            return Err(Error::shape("loss", format!("{} targets for a batch of {b}", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= cfg.n_answers) {
            return Err(Error::invalid("loss", format!("target {t} is not a one-hot index over {} answers", cfg.n_answers)));
        }
        if rules.len() != b * cfg.rule_dim {
            return Err(Error::shape("loss", format!("{} rule bits for {b}×{}", rules.len(), cfg.rule_dim)));
        }
        if rules.iter().any(|&r| r != T::zero() && r != T::one()) {
            return Err(Error::invalid("loss", "rule targets must be 0 or 1"));
        }

        let mut onehot = vec![T::zero(); b * cfg.n_answers];
        for (i, &t) in targets.iter().enumerate() {
            onehot[i * cfg.n_answers + t] = T::one();
        }
        let onehot = tape.constant(Tensor::new(vec![b, cfg.n_answers], onehot)?);
        let log_p = tape.log_softmax(out.answers)?;
        let picked = tape.mul(log_p, onehot)?;
        let sum = tape.sum(picked);
        let ce = tape.scale(sum, T::lit(-1.0 / b as f64));

        let bce_aggregate = tape.bce_with_logits(out.rules_aggregate, rules)?;
        let bce_conditioned = tape.bce_with_logits(out.rules_conditioned, rules)?;
        let weighted_aggregate = tape.scale(bce_aggregate, T::lit(cfg.beta));
        let weighted_conditioned = tape.scale(bce_conditioned, T::lit(cfg.gamma));
        let partial = tape.add(ce, weighted_aggregate)?;
        let total = tape.add(partial, weighted_conditioned)?;
        Ok(LossTerms {
            total,
            ce,
            bce_aggregate,
            bce_conditioned,
        })
    }

    /// Evaluation-mode forward pass without gradient bookkeeping.
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<Prediction<T>> {
        let mut tape = Tape::inference();
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, x, NormMode::Eval)?;
        Ok(Prediction {
            answers: tape.tensor(out.answers),
            rules_aggregate: tape.tensor(out.rules_aggregate),
            rules_conditioned: tape.tensor(out.rules_conditioned),
        })
    }
}

/// Number of trainable scalars of a model with `config`.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(Pong::<f32>::new(config.clone(), 0)?.param_count())
}
