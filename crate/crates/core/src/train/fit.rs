//! Minibatch training with per-epoch validation, and dataset evaluation.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{softmax, MetricReport};
use super::optim::Adam;
use super::schedule::{Decision, Schedule};
use crate::data::{decode_rules, Dataset, PANEL_BYTES, PANEL_SIZE, RULE_DIM};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, ModelConfig, Pong};
use crate::seed::derive_seed;
use crate::tensor::{NormMode, Real, Tape, Tensor};

/// Header of the per-epoch metrics file.
pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_acc,lr";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub lr_factor: f64,
    pub reduce_after: usize,
    pub stop_after: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 128,
            max_epochs: 100,
            lr: 1e-3,
            lr_factor: 0.1,
            reduce_after: 5,
            stop_after: 10,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if self.eval_batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("evaluation batch size and epoch count must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!(
                "need a positive learning rate and a reduction factor in (0, 1), got {} and {}",
                self.lr, self.lr_factor
            )));
        }
        if self.reduce_after == 0 || self.stop_after == 0 {
            return Err(Error::Config("patience values must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.train_loss, self.val_loss, self.val_acc, self.lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Rejects datasets whose geometry or rule length differs from the model's.
pub fn check_compatible(config: &ModelConfig, data: &Dataset) -> Result<()> {
    let g = data.geometry();
    if g.n_context() != config.n_context || g.n_answers() != config.n_answers || data.rule_dim != config.rule_dim {
        return Err(Error::Config(format!(
            "dataset ({g}: {} context, {} answers, d-r {}) does not match the model ({} context, {} answers, d-r {})",
            g.n_context(),
            g.n_answers(),
            data.rule_dim,
            config.n_context,
            config.n_answers,
            config.rule_dim
        )));
    }
    Ok(())
}

/// Panels of instances `idx` as `[B×n×80×80]` in `[0, 1]`.
pub fn batch_images<T: Real>(data: &Dataset, idx: &[usize]) -> Result<Tensor<T>> {
    let n = data.geometry().n_panels();
    let scale = T::lit(1.0 / 255.0);
    let mut out = Vec::with_capacity(idx.len() * n * PANEL_BYTES);
    for &i in idx {
        out.extend(data.instance_panels(i).iter().map(|&p| T::lit(f64::from(p)) * scale));
    }
    Tensor::new(vec![idx.len(), n, PANEL_SIZE, PANEL_SIZE], out)
}

pub fn batch_rules<T: Real>(data: &Dataset, idx: &[usize]) -> Vec<T> {
    idx.iter()
        .flat_map(|&i| data.instance_rules(i).iter().map(|&b| T::lit(f64::from(b))))
        .collect()
}

pub fn batch_targets(data: &Dataset, idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| data.targets[i] as usize).collect()
}

/// Breakdown keys of an instance: its `rule:attribute` pairs.
fn rule_labels(data: &Dataset, i: usize) -> Vec<String> {
    let bits = data.instance_rules(i);
    if data.rule_dim == RULE_DIM {
        if let Ok(specs) = decode_rules(bits) {
            return specs.iter().map(ToString::to_string).collect();
        }
    }
    (0..bits.len()).filter(|&j| bits[j] == 1).map(|j| format!("bit{j}")).collect()
}

/// Evaluation-mode metrics over the whole dataset, including the mean
/// training objective.
pub fn evaluate<T: Real>(model: &mut Pong<T>, data: &Dataset, batch_size: usize) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("evaluate", "batch size must be positive"));
    }
    check_compatible(&model.config, data)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut report: Option<MetricReport> = None;
    for idx in all.chunks(batch_size) {
        let mut tape = Tape::inference();
        let x = tape.constant(batch_images(data, idx)?);
        let out = model.forward(&mut tape, x, NormMode::Eval)?;
        let targets = batch_targets(data, idx);
        let terms = model.loss(&mut tape, &out, &targets, &batch_rules(data, idx))?;
        let probs: Vec<f64> = tape
            .value(out.answers)
            .chunks(model.config.n_answers)
            .flat_map(|s| softmax(&s.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>()))
            .collect();
        let labels: Vec<Vec<String>> = idx.iter().map(|&i| rule_labels(data, i)).collect();
        let mut part = MetricReport::from_probabilities(&probs, &targets, &labels)?;
        part.loss = tape.value(terms.total)[0].to_f64_lossy();
        report = Some(match report {
            None => part,
            Some(r) => r.merge(&part),
        });
    }
    Ok(report.expect("non-empty dataset"))
}

/// One pass over `order` in minibatches; returns the sample-weighted mean loss.
fn train_epoch<T: Real>(
    model: &mut Pong<T>,
    adam: &mut Adam<T>,
    data: &Dataset,
    order: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let (mut total, mut seen) = (0.0, 0usize);
    for idx in order.chunks(batch_size) {
        if idx.len() < 2 {
            warn!("dropping a trailing batch of one instance: batch norm needs two");
            continue;
        }
        let mut tape = Tape::new();
        let x = tape.constant(batch_images(data, idx)?);
        let out = model.forward(&mut tape, x, NormMode::Train)?;
        let terms = model.loss(&mut tape, &out, &batch_targets(data, idx), &batch_rules(data, idx))?;
        let loss = tape.value(terms.total)[0].to_f64_lossy();
        tape.backward(terms.total)?;
        model.params.zero_grads();
        model.params.accumulate_grads(&tape);
        drop(tape);
        adam.step(&mut model.params)?;
        total += loss * idx.len() as f64;
        seen += idx.len();
    }
    if seen == 0 {
        return Err(Error::invalid("train", "no minibatch of at least two instances"));
    }
    Ok(total / seen as f64)
}

/// Trains `model` with Adam, the plateau schedule and early stopping. With
/// `out`, writes `metrics.csv` row by row and checkpoints every new best
/// validation loss under `checkpoint/`.
pub fn train<T: Real>(
    model: &mut Pong<T>,
    train_data: &Dataset,
    val_data: &Dataset,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_compatible(&model.config, train_data)?;
    check_compatible(&model.config, val_data)?;
    if train_data.len() < 2 || val_data.is_empty() {
        return Err(Error::Config("need at least two training and one validation instance".into()));
    }
    let mut csv = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            let path = dir.join(METRICS_FILE);
            let mut f = File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
            writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io("writing metrics", e))?;
            Some(f)
        }
        None => None,
    };

    let mut adam = Adam::new(cfg.lr);
    let mut schedule = Schedule::with_patience(cfg.lr, cfg.lr_factor, cfg.reduce_after, cfg.stop_after);
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle", epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let lr = adam.lr;
        let train_loss = train_epoch(model, &mut adam, train_data, &order, cfg.batch_size)?;
        let val = evaluate(model, val_data, cfg.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_acc: val.accuracy,
            lr,
        };
        info!(
            "epoch {epoch}: train {train_loss:.4} val {:.4} acc {:.4} lr {lr:e}",
            val.loss, val.accuracy
        );
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", record.csv_row())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io("writing metrics", e))?;
        }
        report.epochs.push(record);
        match schedule.observe(val.loss) {
            Decision::Stop => {
                info!("stopping: no validation improvement for {} epochs", schedule.stale());
                report.stopped_early = true;
                break;
            }
            Decision::Continue { lr, improved, reduced } => {
                if improved {
                    report.best_epoch = epoch;
                    report.best_val_loss = val.loss;
                    if let Some(dir) = out {
                        let meta = [
                            ("epoch".to_string(), epoch.to_string()),
                            ("val-loss".to_string(), val.loss.to_string()),
                            ("seed".to_string(), cfg.seed.to_string()),
                        ];
                        save_checkpoint(model, &dir.join(CHECKPOINT_DIR), &meta)?;
                    }
                }
                if reduced {
                    info!("learning rate reduced to {lr:e}");
                }
                adam.lr = lr;
            }
        }
    }
    Ok(report)
}
