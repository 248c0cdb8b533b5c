use indexmap::IndexMap;

use super::{EngineError, Tape, Tensor, Var};

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; re-adding a name is an error.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<(), EngineError> {
        let name = name.into();
        t.as_f64()?;
        if self.tensors.contains_key(&name) {
            return Err(EngineError::InvalidArgument(format!(
                "duplicate parameter {name}"
            )));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every parameter as a gradient-requiring leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams, EngineError> {
        let mut vars = IndexMap::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            vars.insert(name.clone(), tape.param(t)?);
        }
        Ok(BoundParams { vars })
    }

    /// Replaces every tensor with the same-named one from `other`, which must
    /// have identical names, order and shapes.
    pub fn assign_from(&mut self, other: ParamStore) -> Result<(), EngineError> {
        if other.tensors.len() != self.tensors.len() {
            return Err(EngineError::CorruptCheckpoint(format!(
                "expected {} tensors, found {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for ((name, mine), (oname, theirs)) in self.tensors.iter().zip(other.tensors.iter()) {
            if name != oname || mine.shape() != theirs.shape() || mine.dtype() != theirs.dtype() {
                return Err(EngineError::CorruptCheckpoint(format!(
                    "tensor {oname} {:?} does not match expected {name} {:?}",
                    theirs.shape(),
                    mine.shape()
                )));
            }
        }
        self.tensors = other.tensors;
        Ok(())
    }
}

/// Tape handles for a [`ParamStore`], keyed by parameter name.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Handles created elsewhere, for running a model on leaves of the
    /// caller's choosing.
    pub fn from_vars<I, S>(vars: I) -> Self
    where
        I: IntoIterator<Item = (S, Var)>,
        S: Into<String>,
    {
        Self {
            vars: vars.into_iter().map(|(n, v)| (n.into(), v)).collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var, EngineError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| EngineError::InvalidArgument(format!("unknown parameter {name}")))
    }

    /// Gradients in store order; parameters unused by the loss get zeros.
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.vars
            .values()
            .map(|&v| match tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; tape.value(v).len()],
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state: one first/second moment buffer per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter in `params` from `grads`
    /// (store order).
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<(), EngineError> {
        if grads.len() != params.len() {
            return Err(EngineError::ShapeMismatch {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for ((_, t), g) in params.tensors.iter().zip(grads) {
            if t.len() != g.len() {
                return Err(EngineError::ShapeMismatch {
                    op: "adam_step",
                    left: t.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
        }
        if self.first.is_empty() {
            self.first = params
                .tensors
                .values()
                .map(|t| vec![0.0; t.len()])
                .collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.tensors.values())
                .any(|(m, t)| m.len() != t.len())
        {
            return Err(EngineError::ShapeMismatch {
                op: "adam_step",
                left: self.first.iter().map(Vec::len).collect(),
                right: params.tensors.values().map(Tensor::len).collect(),
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((_, t), g), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let w = t.as_f64_mut()?;
            for k in 0..w.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                w[k] -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
