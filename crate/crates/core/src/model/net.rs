use std::collections::BTreeMap;

use noisecond_autodiff::{
    BatchNormLayer, BufferStore, Conv2dLayer, DenseLayer, Graph, Mode, ParamStore, Real, Tensor, Var,
};
use rand::Rng;

use super::config::{BlockSpec, ModelConfig};
use crate::error::{Error, Result};

/// Adds a per-channel noise term (`B x C`) and per-row/per-column location
/// tables (`H x C`, `W x C`) to a `B x C x H x W` map. Absent terms add nothing.
pub fn inject_condition<T: Real>(
    g: &mut Graph<'_, T>,
    conv_out: Var,
    noise_bias: Option<Var>,
    time_table: Option<Var>,
    freq_table: Option<Var>,
) -> Result<Var> {
    let shape = g.shape(conv_out).to_vec();
    let &[b, c, h, w] = shape.as_slice() else {
        return Err(Error::Shape(format!("condition target must be 4-d, got {shape:?}")));
    };
    let mut y = conv_out;
    if let Some(v) = noise_bias {
        if g.shape(v) != [b, c] {
            return Err(Error::Shape(format!("noise term {:?} for map {shape:?}", g.shape(v))));
        }
        let v = g.reshape(v, vec![b, c, 1, 1])?;
        y = g.add(y, v)?;
    }
    if let Some(t) = time_table {
        if g.shape(t) != [h, c] {
            return Err(Error::Shape(format!("time table {:?} for map {shape:?}", g.shape(t))));
        }
        let t = g.transpose(t)?;
        let t = g.reshape(t, vec![c, h, 1])?;
        y = g.add(y, t)?;
    }
    if let Some(f) = freq_table {
        if g.shape(f) != [w, c] {
            return Err(Error::Shape(format!("freq table {:?} for map {shape:?}", g.shape(f))));
        }
        let f = g.transpose(f)?;
        let f = g.reshape(f, vec![c, 1, w])?;
        y = g.add(y, f)?;
    }
    Ok(y)
}

/// Projections one conditioned conv layer owns.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvCondition {
    pub noise_proj: Option<DenseLayer>,
    pub time_proj: DenseLayer,
    pub freq_proj: DenseLayer,
}

/// Per-forward conditioning inputs for one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockInputs {
    pub embedding: Option<Var>,
    pub time_hidden: Var,
    pub freq_hidden: Var,
}

impl ConvCondition {
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        embed_dim: Option<usize>,
        loc_hidden: usize,
        rng: &mut R,
    ) -> Self {
        ConvCondition {
            noise_proj: embed_dim
                .map(|e| DenseLayer::new(store, &format!("{name}.noise_proj"), e, channels, false, rng)),
            time_proj: DenseLayer::new(store, &format!("{name}.time_proj"), loc_hidden, channels, false, rng),
            freq_proj: DenseLayer::new(store, &format!("{name}.freq_proj"), loc_hidden, channels, false, rng),
        }
    }

    fn apply<T: Real>(&self, g: &mut Graph<'_, T>, y: Var, inputs: &BlockInputs) -> Result<Var> {
        let noise = match (&self.noise_proj, inputs.embedding) {
            (Some(p), Some(e)) => Some(p.forward(g, e)?),
            _ => None,
        };
        let t = self.time_proj.forward(g, inputs.time_hidden)?;
        let f = self.freq_proj.forward(g, inputs.freq_hidden)?;
        inject_condition(g, y, noise, Some(t), Some(f))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub spec: BlockSpec,
    pub c_in: usize,
    pub conv1: Conv2dLayer,
    pub bn_mid: BatchNormLayer,
    pub conv2: Conv2dLayer,
    pub bn_out: BatchNormLayer,
    pub shortcut: Option<Conv2dLayer>,
    pub condition: Option<[ConvCondition; 2]>,
}

/// Conditioning dimensions for a block: embedding width (if any) and
/// location hidden width.
#[derive(Debug, Clone, Copy)]
pub struct ConditionDims {
    pub embed_dim: Option<usize>,
    pub loc_hidden: usize,
}

impl ResidualBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        buffers: &mut BufferStore<T>,
        name: &str,
        c_in: usize,
        spec: BlockSpec,
        condition: Option<ConditionDims>,
        rng: &mut R,
    ) -> Self {
        let c = spec.channels;
        let conv1 = Conv2dLayer::new(store, &format!("{name}.conv1"), c_in, c, spec.kernel, spec.stride, false, rng);
        let bn_mid = BatchNormLayer::new(store, buffers, &format!("{name}.bn_mid"), c, rng);
        let conv2 = Conv2dLayer::new(store, &format!("{name}.conv2"), c, c, spec.kernel, (1, 1), false, rng);
        let bn_out = BatchNormLayer::new(store, buffers, &format!("{name}.bn_out"), c, rng);
        let shortcut = (spec.stride != (1, 1) || c_in != c)
            .then(|| Conv2dLayer::new(store, &format!("{name}.shortcut"), c_in, c, (1, 1), spec.stride, false, rng));
        let condition = condition.map(|d| {
            [1, 2].map(|i| ConvCondition::new(store, &format!("{name}.cond{i}"), c, d.embed_dim, d.loc_hidden, rng))
        });
        ResidualBlock { spec, c_in, conv1, bn_mid, conv2, bn_out, shortcut, condition }
    }

    /// `relu(bn_out(conv2(relu(bn_mid(conv1(x) + c1))) + c2 + shortcut(x)))`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        buffers: &mut BufferStore<T>,
        x: Var,
        inputs: Option<&BlockInputs>,
        mode: Mode,
    ) -> Result<Var> {
        let cond = match (&self.condition, inputs) {
            (Some(c), Some(i)) => Some((c, i)),
            (Some(_), None) => {
                return Err(Error::ContractViolation("conditioned block called without inputs".into()))
            }
            _ => None,
        };
        let mut y = self.conv1.forward(g, x)?;
        if let Some((c, i)) = cond {
            y = c[0].apply(g, y, i)?;
        }
        let y = self.bn_mid.forward(g, buffers, y, mode)?;
        let y = g.relu(y);
        let mut y = self.conv2.forward(g, y)?;
        if let Some((c, i)) = cond {
            y = c[1].apply(g, y, i)?;
        }
        let s = match &self.shortcut {
            Some(sc) => sc.forward(g, x)?,
            None => x,
        };
        let z = g.add(y, s)?;
        let z = self.bn_out.forward(g, buffers, z, mode)?;
        Ok(g.relu(z))
    }
}

fn check_input<T: Real>(g: &Graph<'_, T>, x: Var, frames: usize, bins: usize, what: &str) -> Result<usize> {
    match *g.shape(x) {
        [b, 1, h, w] if h == frames && w == bins => Ok(b),
        ref s => Err(Error::Shape(format!("{what} must be B x 1 x {frames} x {bins}, got {s:?}"))),
    }
}

/// Four residual blocks followed by a global average over all locations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    pub blocks: Vec<ResidualBlock>,
    frames: usize,
    bins: usize,
}

impl EmbeddingNet {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: &ModelConfig,
        store: &mut ParamStore<T>,
        buffers: &mut BufferStore<T>,
        rng: &mut R,
    ) -> Self {
        let mut c_in = 1;
        let blocks = cfg
            .emb_blocks
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let b = ResidualBlock::new(store, buffers, &format!("emb.block{i}"), c_in, spec, None, rng);
                c_in = spec.channels;
                b
            })
            .collect();
        EmbeddingNet { blocks, frames: cfg.hint, bins: cfg.freq_bins }
    }

    /// `B x 1 x r x F` to `B x embed_dim`; block output shapes go to `trace`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        buffers: &mut BufferStore<T>,
        noise: Var,
        mode: Mode,
        trace: &mut Vec<Vec<usize>>,
    ) -> Result<Var> {
        check_input(g, noise, self.frames, self.bins, "noise segment")?;
        trace.push(g.shape(noise).to_vec());
        let mut x = noise;
        for b in &self.blocks {
            x = b.forward(g, buffers, x, None, mode)?;
            trace.push(g.shape(x).to_vec());
        }
        Ok(g.global_avg_pool(x)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Time,
    Freq,
}

/// Two dense + batch-norm + relu layers applied to a normalised index.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisMlp {
    pub fc1: DenseLayer,
    pub bn1: BatchNormLayer,
    pub fc2: DenseLayer,
    pub bn2: BatchNormLayer,
}

impl AxisMlp {
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        buffers: &mut BufferStore<T>,
        name: &str,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        AxisMlp {
            fc1: DenseLayer::new(store, &format!("{name}.fc1"), 1, hidden, false, rng),
            bn1: BatchNormLayer::new(store, buffers, &format!("{name}.bn1"), hidden, rng),
            fc2: DenseLayer::new(store, &format!("{name}.fc2"), hidden, hidden, false, rng),
            bn2: BatchNormLayer::new(store, buffers, &format!("{name}.bn2"), hidden, rng),
        }
    }

    /// One hidden row per position (`P x hidden`).
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        buffers: &mut BufferStore<T>,
        positions: &[f64],
        mode: Mode,
    ) -> Result<Var> {
        let x = Tensor::new(
            vec![positions.len(), 1],
            positions.iter().map(|&p| T::from_f64_lossy(p)).collect(),
        )?;
        let x = g.input(x);
        let x = self.fc1.forward(g, x)?;
        let x = self.bn1.forward(g, buffers, x, mode)?;
        let x = g.relu(x);
        let x = self.fc2.forward(g, x)?;
        let x = self.bn2.forward(g, buffers, x, mode)?;
        Ok(g.relu(x))
    }
}

/// `index / (extent - 1)`, or 0 for a single-element axis.
pub fn normalised_positions(extent: usize) -> Vec<f64> {
    if extent <= 1 {
        return vec![0.0; extent];
    }
    (0..extent).map(|i| i as f64 / (extent - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationEmbedder {
    pub time: AxisMlp,
    pub freq: AxisMlp,
    pub hidden: usize,
    time_extents: Vec<usize>,
    freq_extents: Vec<usize>,
}

/// Hidden rows per extent for both axes.
#[derive(Debug, Clone, Default)]
pub struct LocationTables {
    pub time: BTreeMap<usize, Var>,
    pub freq: BTreeMap<usize, Var>,
}

impl LocationEmbedder {
    #[cfg(test)]
    pub(crate) fn new_for_tests<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        buffers: &mut BufferStore<T>,
        hidden: usize,
        extents: &[(usize, usize)],
        rng: &mut R,
    ) -> Self {
        Self::new(store, buffers, hidden, extents, rng)
    }

    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        buffers: &mut BufferStore<T>,
        hidden: usize,
        extents: &[(usize, usize)],
        rng: &mut R,
    ) -> Self {
        let mut time_extents = Vec::new();
        let mut freq_extents = Vec::new();
        for &(h, w) in extents {
            if !time_extents.contains(&h) {
                time_extents.push(h);
            }
            if !freq_extents.contains(&w) {
                freq_extents.push(w);
            }
        }
        LocationEmbedder {
            time: AxisMlp::new(store, buffers, "enh.loc.time", hidden, rng),
            freq: AxisMlp::new(store, buffers, "enh.loc.freq", hidden, rng),
            hidden,
            time_extents,
            freq_extents,
        }
    }

    /// Embeds every index of `extent` along `axis` (`extent x hidden`).
    pub fn embed_axis<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        buffers: &mut BufferStore<T>,
        axis: Axis,
        extent: usize,
        mode: Mode,
    ) -> Result<Var> {
        let mlp = match axis {
            Axis::Time => &self.time,
            Axis::Freq => &self.freq,
        };
        mlp.forward(g, buffers, &normalised_positions(extent), mode)
    }

    /// Runs each axis network once over the positions of all extents the
    /// enhancement blocks need, then splits the rows per extent.
    pub fn tables<T: Real>(&self, g: &mut Graph<'_, T>, buffers: &mut BufferStore<T>, mode: Mode) -> Result<LocationTables> {
        let mut out = LocationTables::default();
        for (mlp, extents, dst) in [
            (&self.time, &self.time_extents, &mut out.time),
            (&self.freq, &self.freq_extents, &mut out.freq),
        ] {
            let positions: Vec<f64> = extents.iter().flat_map(|&e| normalised_positions(e)).collect();
            let all = mlp.forward(g, buffers, &positions, mode)?;
            let mut start = 0;
            for &e in extents {
                dst.insert(e, g.slice_rows(all, start, e)?);
                start += e;
            }
        }
        Ok(out)
    }
}

/// Conditioned residual blocks, a flatten and one dense layer producing an
/// additive mask for the central noisy frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementNet {
    pub blocks: Vec<ResidualBlock>,
    pub location: LocationEmbedder,
    pub output: DenseLayer,
    extents: Vec<(usize, usize)>,
    frames: usize,
    bins: usize,
}

impl EnhancementNet {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: &ModelConfig,
        store: &mut ParamStore<T>,
        buffers: &mut BufferStore<T>,
        rng: &mut R,
    ) -> Self {
        let extents: Vec<_> = cfg.enhancement_trace()[1..].to_vec();
        let location = LocationEmbedder::new(store, buffers, cfg.loc_hidden, &extents, rng);
        let dims = ConditionDims {
            embed_dim: cfg.use_noise_embedding.then_some(cfg.embed_dim),
            loc_hidden: cfg.loc_hidden,
        };
        let mut c_in = 1;
        let blocks = cfg
            .enh_blocks
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let b = ResidualBlock::new(store, buffers, &format!("enh.block{i}"), c_in, spec, Some(dims), rng);
                c_in = spec.channels;
                b
            })
            .collect();
        let output = DenseLayer::new(store, "enh.out", cfg.flatten_width(), cfg.freq_bins, true, rng);
        EnhancementNet { blocks, location, output, extents, frames: cfg.context, bins: cfg.freq_bins }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        buffers: &mut BufferStore<T>,
        noisy: Var,
        central: Var,
        embedding: Option<Var>,
        mode: Mode,
        trace: &mut Vec<Vec<usize>>,
    ) -> Result<Var> {
        check_input(g, noisy, self.frames, self.bins, "noisy segment")?;
        trace.push(g.shape(noisy).to_vec());
        let tables = self.location.tables(g, buffers, mode)?;
        let mut x = noisy;
        for (b, &(h, w)) in self.blocks.iter().zip(&self.extents) {
            let inputs = BlockInputs {
                embedding,
                time_hidden: tables.time[&h],
                freq_hidden: tables.freq[&w],
            };
            x = b.forward(g, buffers, x, Some(&inputs), mode)?;
            trace.push(g.shape(x).to_vec());
        }
        let flat = g.flatten(x)?;
        let mask = self.output.forward(g, flat)?;
        Ok(g.add(central, mask)?)
    }
}

/// Fully-connected baseline fed a centred crop of the noisy segment and the
/// time-averaged noise segment.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseAwareNet {
    pub hidden: Vec<(DenseLayer, BatchNormLayer)>,
    pub output: DenseLayer,
    pub crop: usize,
}

impl NoiseAwareNet {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: &ModelConfig,
        store: &mut ParamStore<T>,
        buffers: &mut BufferStore<T>,
        rng: &mut R,
    ) -> Self {
        let mut d_in = (cfg.baseline_frames + 1) * cfg.freq_bins;
        let hidden = (0..cfg.baseline_layers)
            .map(|i| {
                let name = format!("baseline.fc{i}");
                let fc = DenseLayer::new(store, &name, d_in, cfg.baseline_hidden, false, rng);
                let bn = BatchNormLayer::new(store, buffers, &format!("{name}.bn"), cfg.baseline_hidden, rng);
                d_in = cfg.baseline_hidden;
                (fc, bn)
            })
            .collect();
        let output = DenseLayer::new(store, "baseline.out", d_in, cfg.freq_bins, true, rng);
        NoiseAwareNet { hidden, output, crop: cfg.baseline_frames }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        buffers: &mut BufferStore<T>,
        features: Var,
        central: Var,
        mode: Mode,
    ) -> Result<Var> {
        let mut x = features;
        for (fc, bn) in &self.hidden {
            x = fc.forward(g, x)?;
            x = bn.forward(g, buffers, x, mode)?;
            x = g.relu(x);
        }
        let mask = self.output.forward(g, x)?;
        Ok(g.add(central, mask)?)
    }
}

/// `concat(noisy[c - k/2 .. c - k/2 + k], mean_t(noise))` per batch row.
pub fn baseline_features<T: Real>(
    noisy: &Tensor<T>,
    noise: &Tensor<T>,
    central: usize,
    crop: usize,
) -> Result<Tensor<T>> {
    let (&[b, 1, n, f], &[b2, 1, r, f2]) = (noisy.shape(), noise.shape()) else {
        return Err(Error::Shape(format!(
            "baseline inputs must be B x 1 x T x F, got {:?} and {:?}",
            noisy.shape(),
            noise.shape()
        )));
    };
    if b != b2 || f != f2 || crop > n {
        return Err(Error::Shape(format!(
            "baseline inputs {:?} and {:?} with crop {crop}",
            noisy.shape(),
            noise.shape()
        )));
    }
    let start = central - crop / 2;
    let width = (crop + 1) * f;
    let mut out = Vec::with_capacity(b * width);
    let frames = T::from_f64_lossy(r as f64);
    for i in 0..b {
        out.extend_from_slice(&noisy.data()[(i * n + start) * f..(i * n + start + crop) * f]);
        let seg = &noise.data()[i * r * f..(i + 1) * r * f];
        out.extend((0..f).map(|k| (0..r).map(|t| seg[t * f + k]).sum::<T>() / frames));
    }
    Ok(Tensor::new(vec![b, width], out)?)
}
