//! Finite-difference check of the full model loss in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Pong};
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tensor::{relative_error, NormMode, Tape, Tensor};

/// One checked scalar.
#[derive(Clone, Debug)]
pub struct ParamProbe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: Vec<ParamProbe>,
    pub max_error: f64,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_error < tolerance
    }
}

struct Problem {
    images: Tensor<f64>,
    targets: Vec<usize>,
    rules: Vec<f64>,
}

fn loss_value(model: &mut Pong<f64>, p: &Problem) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(p.images.clone());
    let out = model.forward(&mut tape, x, NormMode::Train)?;
    let terms = model.loss(&mut tape, &out, &p.targets, &p.rules)?;
    Ok(tape.value(terms.total)[0])
}

/// Central-difference steps tried per coordinate, largest first.
///
/// The loss is piecewise smooth: every ReLU and max-pool window is a kink,
/// and a perturbation of an encoder weight moves tens of thousands of
/// pre-activations. A step that straddles one of them biases the difference
/// quotient, so each coordinate is retried with smaller steps and scored by
/// its best agreement. A wrong analytic gradient disagrees at every step.
pub const MODEL_GRAD_STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];

/// Compares the tape gradient of the training loss on a random batch with
/// central differences at `samples` parameter coordinates.
///
/// Coordinates are drawn by picking a parameter tensor uniformly and then an
/// entry uniformly, so small tensors (norm affines, biases) are exercised as
/// often as the large weight matrices. Images are uniform noise, which keeps
/// max-pool windows free of ties.
pub fn gradcheck_model(config: &ModelConfig, batch: usize, samples: usize, seed: u64) -> Result<GradCheckReport> {
    if batch < 2 {
        return Err(Error::invalid("gradcheck", "batch norm needs a batch of at least 2"));
    }
    let mut model = Pong::<f64>::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = config.n_panels();
    let size = config.image_size;
    let images: Vec<f64> = (0..batch * n * size * size).map(|_| rng.gen::<f64>()).collect();
    let problem = Problem {
        images: Tensor::new(vec![batch, n, size, size], images)?,
        targets: (0..batch).map(|_| rng.gen_range(0..config.n_answers)).collect(),
        rules: (0..batch * config.rule_dim).map(|_| f64::from(rng.gen_bool(0.25) as u8)).collect(),
    };

    let mut tape = Tape::new();
    let x = tape.constant(problem.images.clone());
    let out = model.forward(&mut tape, x, NormMode::Train)?;
    let terms = model.loss(&mut tape, &out, &problem.targets, &problem.rules)?;
    let loss = tape.value(terms.total)[0];
    tape.backward(terms.total)?;
    model.params.zero_grads();
    model.params.accumulate_grads(&tape);
    drop(tape);

    let again = loss_value(&mut model, &problem)?;
    if again != loss {
        return Err(Error::NonDeterministic { first: loss, second: again });
    }

    let ids: Vec<ParamId> = model.params.iter().map(|(id, _)| id).collect();
    let mut probes = Vec::with_capacity(samples);
    for _ in 0..samples {
        let id = ids[rng.gen_range(0..ids.len())];
        let index = rng.gen_range(0..model.params.get(id).len());
        let analytic = model.params.get(id).grad()[index];
        let orig = model.params.get(id).value()[index];
        let mut best: Option<(f64, f64)> = None;
        for h in MODEL_GRAD_STEPS {
            model.params.get_mut(id).value_mut()[index] = orig + h;
            let plus = loss_value(&mut model, &problem)?;
            model.params.get_mut(id).value_mut()[index] = orig - h;
            let minus = loss_value(&mut model, &problem)?;
            model.params.get_mut(id).value_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let error = relative_error(analytic, numeric);
            if best.map_or(true, |(_, e)| error < e) {
                best = Some((numeric, error));
            }
        }
        let (numeric, error) = best.expect("at least one step");
        probes.push(ParamProbe {
            name: model.params.get(id).name.clone(),
            index,
            analytic,
            numeric,
            error,
        });
    }
    let max_error = probes.iter().map(|p| p.error).fold(0.0, f64::max);
    Ok(GradCheckReport { probes, max_error, loss })
}
