use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    /// Participates in weight decay and the L2 penalty.
    pub decay: bool,
}

/// Named parameters, iterated in sorted name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Fails if the name is taken.
    pub fn insert(&mut self, name: &str, value: Matrix, decay: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::invalid(alloc::format!("duplicate parameter name `{name}`")));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.insert(name.to_string(), Param { value, grad, decay });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.get(name).map(|p| &p.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        self.get(name).map(|p| &p.grad)
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                left: p.value.shape(),
                right: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.as_mut_slice().fill(0.0);
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        libm::sqrt(self.entries.values().map(|p| p.grad.sum_squares()).sum())
    }

    /// Sum of squares over decayed parameters.
    pub fn l2_penalty(&self) -> f64 {
        self.entries
            .values()
            .filter(|p| p.decay)
            .map(|p| p.value.sum_squares())
            .sum()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in self.entries.values_mut() {
                for g in p.grad.as_mut_slice() {
                    *g *= s;
                }
            }
        }
        norm
    }
}
