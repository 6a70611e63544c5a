use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn evaluate<T, F>(f: &mut F, input: Tensor<T>) -> Result<T>
where
    T: Real,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(input, false);
    let out = f(&mut tape, leaf)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::shape("grad_check", "function must return a scalar"));
    }
    Ok(value[0])
}

/// Compares the tape gradient of a scalar function with central differences
/// and returns the largest [`relative_error`] over all coordinates of `x`.
///
/// `f` receives a fresh tape and the leaf holding `x`. It must be
/// deterministic; two evaluations at `x` that differ are rejected.
pub fn grad_check<T, F>(mut f: F, x: &Tensor<T>, step: T) -> Result<f64>
where
    T: Real,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    if step <= T::zero() {
        return Err(Error::invalid("grad_check", "step must be positive"));
    }

    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let loss = f(&mut tape, leaf)?;
    let first = tape.value(loss)[0];
    tape.backward(loss)?;
    let analytic = tape
        .grad(leaf)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![T::zero(); x.len()]);

    let second = evaluate(&mut f, x.clone())?;
    if first != second {
        return Err(Error::NonDeterministic {
            first: first.to_f64_lossy(),
            second: second.to_f64_lossy(),
        });
    }

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let fp = evaluate(&mut f, plus)?;
        let fm = evaluate(&mut f, minus)?;
        let numeric = (fp - fm) / (step + step);
        worst = worst.max(relative_error(a.to_f64_lossy(), numeric.to_f64_lossy()));
    }
    Ok(worst)
}
