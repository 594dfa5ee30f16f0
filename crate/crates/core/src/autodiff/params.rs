use std::collections::HashMap;

use ndarray::ArrayD;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Named parameter tensors in a fixed declaration order.
///
/// The order is the canonical one for checkpoints, optimizer state, and
/// flattened coordinate access in finite-difference checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Params {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        &self.values[self.index[name]]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.values.iter())
    }

    pub fn values(&self) -> &[ArrayD<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<f64>] {
        &mut self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Mutable access to one scalar coordinate in flat declaration order.
    pub fn coord_mut(&mut self, mut i: usize) -> &mut f64 {
        for v in &mut self.values {
            if i < v.len() {
                return v.iter_mut().nth(i).unwrap();
            }
            i -= v.len();
        }
        panic!("coordinate index out of range");
    }

    /// Elementwise in-place update from per-tensor deltas.
    pub fn apply_deltas(&mut self, deltas: &[ArrayD<f64>]) -> Result<()> {
        if deltas.len() != self.values.len() {
            return Err(Error::invalid_argument("delta count mismatch"));
        }
        for (v, d) in self.values.iter_mut().zip(deltas) {
            if v.raw_dim() != d.raw_dim() {
                return Err(Error::invalid_argument("delta shape mismatch"));
            }
            *v += d;
        }
        Ok(())
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter tensors bound as leaves on a tape, by name.
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    /// Bind every parameter as a tape leaf, in declaration order.
    pub fn bind(tape: &mut Tape, params: &Params) -> Self {
        let vars = params
            .values
            .iter()
            .map(|v| tape.leaf(v.clone()))
            .collect();
        BoundParams {
            vars,
            index: params.index.clone(),
        }
    }

    pub fn get(&self, name: &str) -> Var {
        self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }

    /// Collect gradients parallel to the declaration order, zeros for
    /// parameters the root does not reach.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> Vec<ArrayD<f64>> {
        self.vars
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape))
            .collect()
    }
}
