//! Answer metrics: accuracy, cross-entropy, total variation distance and
//! Brier score, with a per-rule breakdown.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Accuracy over the instances governed by one `rule:attribute` pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Breakdown {
    pub count: usize,
    pub correct: usize,
}

impl Breakdown {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count.max(1) as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub count: usize,
    pub accuracy: f64,
    /// Mean `-ln p(target)`.
    pub ce: f64,
    /// Mean `½ Σ |p - y|`.
    pub tvd: f64,
    /// Mean `Σ (p - y)²`.
    pub brier: f64,
    /// Mean training objective, when it was computed.
    pub loss: f64,
    pub breakdown: BTreeMap<String, Breakdown>,
}

/// Softmax in double precision via log-sum-exp.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    (0..values.len()).fold(0, |b, i| if values[i] > values[b] { i } else { b })
}

impl MetricReport {
    /// Scores `n_answers`-way predictions. `probs` holds one distribution per
    /// instance; `labels` names the breakdown keys of each instance.
    pub fn from_probabilities(probs: &[f64], targets: &[usize], labels: &[Vec<String>]) -> Result<Self> {
        let n = targets.len();
        if n == 0 {
            return Err(Error::invalid("evaluate", "no instances to score"));
        }
        if probs.len() % n != 0 || labels.len() != n {
            return Err(Error::shape(
                "evaluate",
                format!("{} probabilities and {} label sets for {n} targets", probs.len(), labels.len()),
            ));
        }
        let k = probs.len() / n;
        let mut r = MetricReport {
            count: n,
            ..Default::default()
        };
        for (i, (&t, p)) in targets.iter().zip(probs.chunks_exact(k)).enumerate() {
            if t >= k {
                return Err(Error::invalid("evaluate", format!("target {t} is not below {k}")));
            }
            let hit = argmax(p) == t;
            r.accuracy += f64::from(u8::from(hit));
            r.ce -= p[t].ln();
            for (j, &pj) in p.iter().enumerate() {
                let y = if j == t { 1.0 } else { 0.0 };
                r.tvd += 0.5 * (pj - y).abs();
                r.brier += (pj - y) * (pj - y);
            }
            for key in &labels[i] {
                let b = r.breakdown.entry(key.clone()).or_default();
                b.count += 1;
                b.correct += usize::from(hit);
            }
        }
        let nf = n as f64;
        r.accuracy /= nf;
        r.ce /= nf;
        r.tvd /= nf;
        r.brier /= nf;
        Ok(r)
    }

    /// Count-weighted combination of two reports over disjoint instances.
    pub fn merge(&self, other: &MetricReport) -> MetricReport {
        let n = self.count + other.count;
        if n == 0 {
            return MetricReport::default();
        }
        let (wa, wb) = (self.count as f64 / n as f64, other.count as f64 / n as f64);
        let mix = |a: f64, b: f64| wa * a + wb * b;
        let mut breakdown = self.breakdown.clone();
        for (k, b) in &other.breakdown {
            let e = breakdown.entry(k.clone()).or_default();
            e.count += b.count;
            e.correct += b.correct;
        }
        MetricReport {
            count: n,
            accuracy: mix(self.accuracy, other.accuracy),
            ce: mix(self.ce, other.ce),
            tvd: mix(self.tvd, other.tvd),
            brier: mix(self.brier, other.brier),
            loss: mix(self.loss, other.loss),
            breakdown,
        }
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>10}", "metric", "value");
        for (name, v) in [
            ("instances", self.count as f64),
            ("accuracy", self.accuracy),
            ("cross-entropy", self.ce),
            ("total-variation", self.tvd),
            ("brier", self.brier),
            ("loss", self.loss),
        ] {
            let _ = writeln!(s, "{name:<28} {v:>10.4}");
        }
        for (k, b) in &self.breakdown {
            let _ = writeln!(s, "{:<28} {:>10.4}  (n={})", format!("acc[{k}]"), b.accuracy(), b.count);
        }
        s
    }

    /// `metric,value` CSV, breakdown rows keyed `acc[rule:attribute]`.
    pub fn csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "count,{}", self.count);
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("ce", self.ce),
            ("tvd", self.tvd),
            ("brier", self.brier),
            ("loss", self.loss),
        ] {
            let _ = writeln!(s, "{name},{v}");
        }
        for (k, b) in &self.breakdown {
            let _ = writeln!(s, "acc[{k}],{}", b.accuracy());
        }
        s
    }
}
