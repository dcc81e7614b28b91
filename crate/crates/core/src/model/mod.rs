//! Noise-embedding and conditioned enhancement networks plus the
//! noise-aware fully-connected baseline.

mod config;
mod net;

use noisecond_autodiff::{BufferStore, Graph, Mode, ParamId, ParamStore, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{parse_kv_lines, Arch, BlockSpec, ModelConfig};
pub use net::{
    baseline_features, inject_condition, normalised_positions, AxisMlp, Axis, BlockInputs, ConditionDims,
    ConvCondition, EmbeddingNet, EnhancementNet, LocationEmbedder, LocationTables, NoiseAwareNet, ResidualBlock,
};

use crate::corpus::TrainingExample;
use crate::error::{Error, Result};

/// Per-parameter gradients, in parameter order.
pub type Gradients<T> = Vec<(ParamId, Vec<T>)>;

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Network {
    Conditioned {
        embedding: Option<EmbeddingNet>,
        enhancement: EnhancementNet,
    },
    NoiseAware(NoiseAwareNet),
}

/// Network inputs: `B x 1 x n x F` noisy log-magnitudes and, when the
/// network reads it, `B x 1 x r x F` noise log-magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs<T> {
    pub noisy: Tensor<T>,
    pub noise: Option<Tensor<T>>,
}

impl<T: Real> Inputs<T> {
    pub fn batch(&self) -> usize {
        self.noisy.shape().first().copied().unwrap_or(0)
    }

    pub fn cast<U: Real>(&self) -> Inputs<U> {
        Inputs {
            noisy: self.noisy.cast(),
            noise: self.noise.as_ref().map(|n| n.cast()),
        }
    }
}

impl Inputs<f32> {
    /// Stacks examples; returns the inputs and the `B x F` clean targets.
    pub fn from_examples(examples: &[TrainingExample]) -> Result<(Inputs<f32>, Tensor<f32>)> {
        let first = examples
            .first()
            .ok_or_else(|| Error::EmptyCorpus("no examples to batch".into()))?;
        let (n, r, f) = (first.noisy_segment.frames(), first.noise_segment.frames(), first.noisy_segment.bins());
        let b = examples.len();
        let mut noisy = Vec::with_capacity(b * n * f);
        let mut noise = Vec::with_capacity(b * r * f);
        let mut clean = Vec::with_capacity(b * f);
        for e in examples {
            if e.noisy_segment.frames() != n || e.noise_segment.frames() != r || e.clean_frame.len() != f {
                return Err(Error::Shape("examples in one batch differ in shape".into()));
            }
            noisy.extend_from_slice(e.noisy_segment.data());
            noise.extend_from_slice(e.noise_segment.data());
            clean.extend_from_slice(&e.clean_frame);
        }
        Ok((
            Inputs {
                noisy: Tensor::new(vec![b, 1, n, f], noisy)?,
                noise: Some(Tensor::new(vec![b, 1, r, f], noise)?),
            },
            Tensor::new(vec![b, f], clean)?,
        ))
    }
}

/// A noise hint reduced to what the network consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum PreparedNoise<T> {
    /// The network ignores the noise recording.
    Unused,
    /// `1 x embed_dim` embedding.
    Embedding(Tensor<T>),
    /// The raw `1 x 1 x r x F` segment, for the baseline.
    Segment(Tensor<T>),
}

/// Output shapes recorded during one forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShapeTrace {
    pub embedding: Vec<Vec<usize>>,
    pub embedding_out: Option<Vec<usize>>,
    pub enhancement: Vec<Vec<usize>>,
    pub output: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    pub network: Network,
    pub params: ParamStore<T>,
    pub buffers: BufferStore<T>,
}

struct Forward {
    output: Var,
    embedding: Option<Var>,
    trace: ShapeTrace,
}

impl<T: Real> Model<T> {
    /// Builds the network for `config` with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut buffers = BufferStore::new();
        let network = match config.arch {
            config::Arch::Conditioned => {
                let embedding = config
                    .use_noise_embedding
                    .then(|| EmbeddingNet::new(&config, &mut params, &mut buffers, &mut rng));
                let enhancement = EnhancementNet::new(&config, &mut params, &mut buffers, &mut rng);
                Network::Conditioned { embedding, enhancement }
            }
            config::Arch::NoiseAware => {
                Network::NoiseAware(NoiseAwareNet::new(&config, &mut params, &mut buffers, &mut rng))
            }
        };
        Ok(Model { config, network, params, buffers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Whether forward passes read the noise segment.
    pub fn reads_noise(&self) -> bool {
        match &self.network {
            Network::Conditioned { embedding, .. } => embedding.is_some(),
            Network::NoiseAware(_) => true,
        }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            network: self.network.clone(),
            params: self.params.cast(),
            buffers: self.buffers.cast(),
        }
    }

    /// The final dense layer's weight and bias.
    pub fn output_layer(&self) -> Vec<ParamId> {
        let layer = match &self.network {
            Network::Conditioned { enhancement, .. } => &enhancement.output,
            Network::NoiseAware(n) => &n.output,
        };
        std::iter::once(layer.weight).chain(layer.bias).collect()
    }

    /// Zeroes the final dense layer, which makes the model an identity on
    /// the central noisy frame.
    pub fn zero_output_layer(&mut self) {
        for id in self.output_layer() {
            for v in self.params.get_mut(id).value.data_mut() {
                *v = T::zero();
            }
        }
    }

    fn central_frames(&self, noisy: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, f, c) = (self.config.context, self.config.freq_bins, self.config.central());
        let &[b, 1, h, w] = noisy.shape() else {
            return Err(Error::Shape(format!("noisy segment must be B x 1 x {n} x {f}, got {:?}", noisy.shape())));
        };
        if (h, w) != (n, f) {
            return Err(Error::Shape(format!("noisy segment must be B x 1 x {n} x {f}, got {:?}", noisy.shape())));
        }
        let mut out = Vec::with_capacity(b * f);
        for i in 0..b {
            out.extend_from_slice(&noisy.data()[(i * n + c) * f..(i * n + c + 1) * f]);
        }
        Ok(Tensor::new(vec![b, f], out)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        config: &ModelConfig,
        network: &Network,
        central: Tensor<T>,
        g: &mut Graph<'_, T>,
        buffers: &mut BufferStore<T>,
        inputs: &Inputs<T>,
        embedding_override: Option<&Tensor<T>>,
        mode: Mode,
    ) -> Result<Forward> {
        let mut trace = ShapeTrace::default();
        let central = g.input(central);
        let need_noise = || {
            inputs.noise.clone().ok_or_else(|| {
                Error::ContractViolation("this model needs a noise segment but none was given".into())
            })
        };
        let (output, embedding) = match network {
            Network::Conditioned { embedding, enhancement } => {
                let emb = match embedding {
                    Some(_) if embedding_override.is_some() => {
                        embedding_override.map(|e| g.input(e.clone()))
                    }
                    Some(net) => {
                        let noise = g.input(need_noise()?);
                        let e = net.forward(g, buffers, noise, mode, &mut trace.embedding)?;
                        trace.embedding_out = Some(g.shape(e).to_vec());
                        Some(e)
                    }
                    None => None,
                };
                let noisy = g.input(inputs.noisy.clone());
                let out = enhancement.forward(g, buffers, noisy, central, emb, mode, &mut trace.enhancement)?;
                (out, emb)
            }
            Network::NoiseAware(net) => {
                let feats = baseline_features(&inputs.noisy, &need_noise()?, config.central(), net.crop)?;
                let feats = g.input(feats);
                (net.forward(g, buffers, feats, central, mode)?, None)
            }
        };
        trace.output = g.shape(output).to_vec();
        Ok(Forward { output, embedding, trace })
    }

    /// Runs a forward pass and hands the graph to `f`.
    fn with_forward<R>(
        &mut self,
        inputs: &Inputs<T>,
        mode: Mode,
        f: impl FnOnce(&mut Graph<'_, T>, &Forward) -> Result<R>,
    ) -> Result<R> {
        if let Some(noise) = &inputs.noise {
            let (r, fb) = (self.config.hint, self.config.freq_bins);
            if self.reads_noise() && noise.shape() != [inputs.batch(), 1, r, fb] {
                return Err(Error::Shape(format!("noise segment must be B x 1 x {r} x {fb}, got {:?}", noise.shape())));
            }
        }
        let central = self.central_frames(&inputs.noisy)?;
        let Model { config, network, params, buffers } = self;
        let mut g = Graph::new(params);
        let fw = Self::build(config, network, central, &mut g, buffers, inputs, None, mode)?;
        f(&mut g, &fw)
    }

    /// Loss under an explicit parameter store with this model's structure,
    /// used for finite-difference probes.
    pub fn loss_with_params(
        &self,
        params: &ParamStore<T>,
        buffers: &mut BufferStore<T>,
        inputs: &Inputs<T>,
        target: &Tensor<T>,
        mode: Mode,
    ) -> Result<T> {
        let central = self.central_frames(&inputs.noisy)?;
        let mut g = Graph::new(params);
        let fw = Self::build(&self.config, &self.network, central, &mut g, buffers, inputs, None, mode)?;
        let t = g.input(target.clone());
        let l = g.mse_loss(fw.output, t)?;
        Ok(g.value(l).data()[0])
    }

    /// Enhanced central frames, `B x F`.
    pub fn predict(&mut self, inputs: &Inputs<T>, mode: Mode) -> Result<Tensor<T>> {
        self.with_forward(inputs, mode, |g, fw| Ok(g.value(fw.output).clone()))
    }

    /// Noise embeddings, `B x embed_dim`.
    pub fn embed(&mut self, inputs: &Inputs<T>, mode: Mode) -> Result<Tensor<T>> {
        self.with_forward(inputs, mode, |g, fw| {
            fw.embedding
                .map(|e| g.value(e).clone())
                .ok_or_else(|| Error::ContractViolation("model has no embedding subnetwork".into()))
        })
    }

    /// Summarises a `1 x 1 x r x F` noise hint for repeated eval-mode
    /// prediction with [`Model::predict_prepared`].
    pub fn prepare_noise(&mut self, hint: &Tensor<T>) -> Result<PreparedNoise<T>> {
        let (r, f) = (self.config.hint, self.config.freq_bins);
        if hint.shape() != [1, 1, r, f] {
            return Err(Error::Shape(format!("noise hint must be 1 x 1 x {r} x {f}, got {:?}", hint.shape())));
        }
        Ok(match &self.network {
            Network::Conditioned { embedding: None, .. } => PreparedNoise::Unused,
            Network::Conditioned { embedding: Some(_), .. } => {
                let inputs = Inputs {
                    noisy: Tensor::zeros(vec![1, 1, self.config.context, f]),
                    noise: Some(hint.clone()),
                };
                PreparedNoise::Embedding(self.embed(&inputs, Mode::Eval)?)
            }
            Network::NoiseAware(_) => PreparedNoise::Segment(hint.clone()),
        })
    }

    /// Eval-mode prediction for `B x 1 x n x F` noisy segments sharing one
    /// prepared noise hint. Fails if any batch norm ran on batch statistics.
    pub fn predict_prepared(&mut self, noisy: &Tensor<T>, noise: &PreparedNoise<T>) -> Result<Tensor<T>> {
        let central = self.central_frames(noisy)?;
        let b = noisy.shape()[0];
        let tile = |t: &Tensor<T>| -> Result<Tensor<T>> {
            let mut shape = t.shape().to_vec();
            shape[0] = b;
            Ok(Tensor::new(shape, t.data().repeat(b))?)
        };
        let (inputs, embedding) = match noise {
            PreparedNoise::Unused => (Inputs { noisy: noisy.clone(), noise: None }, None),
            PreparedNoise::Embedding(e) => (Inputs { noisy: noisy.clone(), noise: None }, Some(tile(e)?)),
            PreparedNoise::Segment(s) => (Inputs { noisy: noisy.clone(), noise: Some(tile(s)?) }, None),
        };
        let Model { config, network, params, buffers } = self;
        let mut g = Graph::new(params);
        let fw = Self::build(config, network, central, &mut g, buffers, &inputs, embedding.as_ref(), Mode::Eval)?;
        let (train_bn, _) = g.batch_norm_counts();
        if train_bn != 0 {
            return Err(Error::ContractViolation(format!("{train_bn} batch norms used batch statistics at inference")));
        }
        Ok(g.value(fw.output).clone())
    }

    pub fn trace(&mut self, inputs: &Inputs<T>, mode: Mode) -> Result<ShapeTrace> {
        self.with_forward(inputs, mode, |_, fw| Ok(fw.trace.clone()))
    }

    pub fn loss(&mut self, inputs: &Inputs<T>, target: &Tensor<T>, mode: Mode) -> Result<T> {
        self.with_forward(inputs, mode, |g, fw| {
            let t = g.input(target.clone());
            let l = g.mse_loss(fw.output, t)?;
            Ok(g.value(l).data()[0])
        })
    }

    /// Mean squared error against `target` and its parameter gradients.
    pub fn loss_and_grads(
        &mut self,
        inputs: &Inputs<T>,
        target: &Tensor<T>,
        mode: Mode,
    ) -> Result<(T, Gradients<T>)> {
        self.with_forward(inputs, mode, |g, fw| {
            let t = g.input(target.clone());
            let l = g.mse_loss(fw.output, t)?;
            let grads = g.backward(l)?;
            Ok((g.value(l).data()[0], grads.params().to_vec()))
        })
    }
}

#[cfg(test)]
mod tests;
