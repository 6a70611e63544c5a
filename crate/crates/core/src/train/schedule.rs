//! Reduce-on-plateau learning rate and early stopping.

/// What to do after an epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decision {
    /// Keep training at `lr`; `improved` marks a new best validation loss.
    Continue { lr: f64, improved: bool, reduced: bool },
    Stop,
}

/// Counts epochs since the last strict improvement of the validation loss.
/// The rate is multiplied by `factor` after `reduce_after` stale epochs
/// (the reduction restarts that count but not the stopping count), and
/// training stops after `stop_after` stale epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub lr: f64,
    pub factor: f64,
    pub reduce_after: usize,
    pub stop_after: usize,
    best: f64,
    stale: usize,
    since_reduction: usize,
}

impl Schedule {
    pub fn new(lr: f64) -> Self {
        Self::with_patience(lr, 0.1, 5, 10)
    }

    pub fn with_patience(lr: f64, factor: f64, reduce_after: usize, stop_after: usize) -> Self {
        Schedule {
            lr,
            factor,
            reduce_after,
            stop_after,
            best: f64::INFINITY,
            stale: 0,
            since_reduction: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Epochs since the last improvement.
    pub fn stale(&self) -> usize {
        self.stale
    }

    /// Records one epoch's validation loss. A NaN loss never improves.
    pub fn observe(&mut self, val_loss: f64) -> Decision {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            self.since_reduction = 0;
            return Decision::Continue {
                lr: self.lr,
                improved: true,
                reduced: false,
            };
        }
        self.stale += 1;
        self.since_reduction += 1;
        if self.stale >= self.stop_after {
            return Decision::Stop;
        }
        let reduced = self.since_reduction >= self.reduce_after;
        if reduced {
            self.lr *= self.factor;
            self.since_reduction = 0;
        }
        Decision::Continue {
            lr: self.lr,
            improved: false,
            reduced,
        }
    }
}
