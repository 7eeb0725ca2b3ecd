use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable matrix and its gradient accumulator.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Parameter group: the dotted-name prefix (`"adapters.general.wq"` → `"adapters"`).
    pub fn group(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Owns every learnable tensor of a model. Modules hold [`ParamId`]s.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Contract(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.tensors.push(ParamTensor::new(name, value));
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn add_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        self.add(name, Matrix::xavier(rows, cols, rng))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0].value
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), t))
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(ParamTensor::zero_grad);
    }

    /// Sorted, de-duplicated group names.
    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.tensors.iter().map(|t| t.group().to_string()).collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn ids_in_group(&self, group: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, t)| t.group() == group)
            .map(|(id, _)| id)
            .collect()
    }

    /// Plain gradient descent on every tensor for which `trainable` holds.
    pub fn sgd_step(&mut self, lr: f64, trainable: impl Fn(&ParamTensor) -> bool) {
        for t in &mut self.tensors {
            if !trainable(t) {
                continue;
            }
            for (v, g) in t.value.as_mut_slice().iter_mut().zip(t.grad.as_slice()) {
                *v -= lr * g;
            }
        }
    }
}
