//! Trainable parameters and batch-norm running statistics.

use std::sync::Arc;

use crate::tensor::{Real, RunningStats, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    value: Arc<Vec<T>>,
    grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn value(&self) -> &[T] {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.value).as_mut_slice()
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        &mut self.grad
    }

    /// Values and gradients borrowed together, for optimizers.
    pub fn value_grad_mut(&mut self) -> (&mut [T], &[T]) {
        (Arc::make_mut(&mut self.value).as_mut_slice(), &self.grad)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Ordered collection of named parameters; the order is the checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let shape = value.shape().to_vec();
        let data = value.into_data();
        let n = data.len();
        self.params.push(Param {
            name: name.into(),
            shape,
            value: Arc::new(data),
            grad: vec![T::zero(); n],
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Registers a parameter on the tape without copying its storage.
    pub fn bind(&self, tape: &mut Tape<T>, id: ParamId) -> Var {
        let p = &self.params[id.0];
        tape.bind(id.0, &p.shape, &p.value, true)
    }

    /// Adds the tape's parameter gradients into the stored gradients.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>) {
        for (key, var) in tape.bindings() {
            if let (Some(p), Some(g)) = (self.params.get_mut(key), tape.grad(var)) {
                for (acc, &v) in p.grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Copies values (not gradients) into a store of another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: Arc::new(p.value.iter().map(|v| U::lit(v.to_f64_lossy())).collect()),
                    grad: vec![U::zero(); p.len()],
                })
                .collect(),
        }
    }
}

/// Named running statistics of every batch-norm layer.
#[derive(Clone, Debug, Default)]
pub struct StatsStore<T> {
    entries: Vec<(String, RunningStats<T>)>,
}

impl<T: Real> StatsStore<T> {
    pub fn new() -> Self {
        StatsStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        self.entries.push((name.into(), RunningStats::new(channels)));
        StatsId(self.entries.len() - 1)
    }

    pub fn get_mut(&mut self, id: StatsId) -> &mut RunningStats<T> {
        &mut self.entries[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut RunningStats<T>)> {
        self.entries.iter_mut().map(|(n, s)| (n.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cast<U: Real>(&self) -> StatsStore<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        StatsStore {
            entries: self
                .entries
                .iter()
                .map(|(n, s)| {
                    (
                        n.clone(),
                        RunningStats {
                            mean: conv(&s.mean),
                            var: conv(&s.var),
                        },
                    )
                })
                .collect(),
        }
    }
}
