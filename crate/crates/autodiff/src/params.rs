//! Named storage for learned parameters and non-learned buffers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl BufferId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter initialisation schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, sqrt(2 / fan_in)).
    He { fan_in: usize },
}

/// A learned tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Vec<usize>>,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Ones => vec![T::one(); len],
            Init::He { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                (0..len)
                    .map(|_| T::from_f64_lossy(normal.sample(rng)))
                    .collect()
            }
        };
        self.push(name, Tensor::new(shape, data).expect("non-zero parameter shape"))
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds `grads` into the stored gradients, creating them where absent.
    pub fn accumulate(&mut self, grads: &[(ParamId, Vec<T>)]) {
        for (id, g) in grads {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => {
                    for (a, &v) in acc.data_mut().iter_mut().zip(g) {
                        *a += v;
                    }
                }
                None => {
                    p.grad = Some(
                        Tensor::new(p.value.shape().to_vec(), g.clone())
                            .expect("gradient matches parameter shape"),
                    );
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(Tensor::cast),
                })
                .collect(),
        }
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn set_values(&mut self, id: ParamId, values: Vec<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if values.len() != p.value.len() {
            return Err(AutodiffError::Shape(format!(
                "parameter {} holds {} values, got {}",
                p.name,
                p.value.len(),
                values.len()
            )));
        }
        p.value.data_mut().copy_from_slice(&values);
        Ok(())
    }
}

/// Non-learned state such as batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Default for BufferStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> BufferStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        self.names.push(name.into());
        self.values.push(value);
        BufferId(self.values.len() - 1)
    }

    pub fn get(&self, id: BufferId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: BufferId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BufferId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (BufferId(i), n.as_str(), v))
    }

    pub fn find(&self, name: &str) -> Option<BufferId> {
        self.names.iter().position(|n| n == name).map(BufferId)
    }

    pub fn cast<U: Real>(&self) -> BufferStore<U> {
        BufferStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}
