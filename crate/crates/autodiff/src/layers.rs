//! Thin layer descriptors binding parameter ids to graph ops.

use rand::Rng;

use crate::error::Result;
use crate::graph::{BatchNormConfig, Graph, Mode, Var};
use crate::params::{BufferId, BufferStore, Init, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv2dLayer {
    /// He-initialised weights, zero bias when `bias` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel.0 * kernel.1;
        let weight = store.add(
            format!("{name}.weight"),
            vec![c_out, c_in, kernel.0, kernel.1],
            Init::He { fan_in },
            rng,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), vec![c_out], Init::Zeros, rng));
        Self {
            weight,
            bias,
            kernel,
            stride,
            c_in,
            c_out,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl DenseLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            vec![d_out, d_in],
            Init::He { fan_in: d_in },
            rng,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), vec![d_out], Init::Zeros, rng));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.dense(x, w, b)
    }
}

/// Learned scale/shift plus running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub config: BatchNormConfig,
}

impl BatchNormLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        buffers: &mut BufferStore<T>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), vec![channels], Init::Ones, rng),
            beta: store.add(format!("{name}.beta"), vec![channels], Init::Zeros, rng),
            running_mean: buffers.push(format!("{name}.running_mean"), Tensor::zeros(vec![channels])),
            running_var: buffers.push(
                format!("{name}.running_var"),
                Tensor::full(vec![channels], T::one()),
            ),
            config: BatchNormConfig::default(),
        }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        buffers: &mut BufferStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        // Two distinct buffers; take them out to borrow both mutably.
        let mut mean = std::mem::replace(buffers.get_mut(self.running_mean), Tensor::scalar(T::zero()));
        let mut var = std::mem::replace(buffers.get_mut(self.running_var), Tensor::scalar(T::zero()));
        let out = g.batch_norm(x, gamma, beta, &mut mean, &mut var, self.config, mode);
        *buffers.get_mut(self.running_mean) = mean;
        *buffers.get_mut(self.running_var) = var;
        out
    }
}
