//! Self-checks shared by the test suite and `noisecond verify`.

use noisecond_autodiff::gradcheck::{check_params, op_suite, GradcheckReport, TOLERANCE};
use noisecond_autodiff::{AutodiffError, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{self, Framing, Waveform};
use crate::error::Result;
use crate::metrics;
use crate::model::{Arch, Inputs, Model, ModelConfig};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    fn below(name: impl Into<String>, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed: measured < threshold,
            measured,
            threshold,
            detail: detail.into(),
        }
    }

    fn exact(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            measured: if passed { 0.0 } else { 1.0 },
            threshold: 0.5,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: measured {:.3e} (limit {:.1e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Shapes,
    Dsp,
    Metrics,
    All,
}

impl std::str::FromStr for Suite {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcheck" => Ok(Suite::Gradcheck),
            "shapes" => Ok(Suite::Shapes),
            "dsp" => Ok(Suite::Dsp),
            "metrics" => Ok(Suite::Metrics),
            "all" => Ok(Suite::All),
            _ => Err(crate::Error::InvalidConfig(format!("unknown suite {s:?}"))),
        }
    }
}

pub fn run(suite: Suite) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::Gradcheck => gradcheck_suite()?,
        Suite::Shapes => shapes_suite()?,
        Suite::Dsp => dsp_suite()?,
        Suite::Metrics => metrics_suite()?,
        Suite::All => {
            let mut v = gradcheck_suite()?;
            v.extend(shapes_suite()?);
            v.extend(dsp_suite()?);
            v.extend(metrics_suite()?);
            v
        }
    })
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).expect("non-empty")
}

/// Every parameter gradient of a full model in train mode against finite
/// differences of the MSE loss on random inputs.
///
/// Parameters are jittered away from initialisation first: zero biases and
/// betas put pre-activations exactly on relu kinks, where one-sided
/// differences disagree with any subgradient.
pub fn model_gradcheck(config: &ModelConfig, seed: u64, batch: usize) -> Result<GradcheckReport> {
    let mut model = Model::<f64>::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in model.params.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let inputs = Inputs {
        noisy: random_tensor(&[batch, 1, config.context, config.freq_bins], &mut rng),
        noise: Some(random_tensor(&[batch, 1, config.hint, config.freq_bins], &mut rng)),
    };
    // A target close to the prediction keeps the loss small, so rounding noise
    // in the differenced losses stays far below the 1e-8 denominator floor.
    // Batch norm makes some directions exactly flat (e.g. the scale of a
    // scalar-input weight row), and those can only be resolved this way.
    let buffers = model.buffers.clone();
    let pred = model.predict(&inputs, Mode::Train)?;
    model.buffers = buffers.clone();
    let target = Tensor::new(
        pred.shape().to_vec(),
        pred.data().iter().map(|p| p + rng.random_range(-0.05..0.05)).collect(),
    )?;
    let (_, grads) = model.loss_and_grads(&inputs, &target, Mode::Train)?;
    model.buffers = buffers;
    let mut store = model.params.clone();
    let report = check_params(&mut store, &grads, |s| {
        let mut b = model.buffers.clone();
        model
            .loss_with_params(s, &mut b, &inputs, &target, Mode::Train)
            .map_err(|e| AutodiffError::ContractViolation(e.to_string()))
    })?;
    Ok(report)
}

pub fn gradcheck_suite() -> Result<Vec<Check>> {
    let mut out: Vec<Check> = op_suite()?
        .into_iter()
        .map(|(name, r)| Check::below(format!("gradcheck {name}"), r.max_rel_error, TOLERANCE, format!("{} entries, worst {}", r.checked, r.worst)))
        .collect();
    let mini = ModelConfig::miniature();
    for (name, cfg) in [
        ("miniature model (embedding)", mini.clone()),
        ("miniature model (no embedding)", ModelConfig { use_noise_embedding: false, ..mini.clone() }),
        ("miniature noise-aware baseline", ModelConfig { arch: Arch::NoiseAware, ..mini }),
    ] {
        let r = model_gradcheck(&cfg, 1, 2)?;
        out.push(Check::below(
            format!("gradcheck {name}"),
            r.max_rel_error,
            TOLERANCE,
            format!("{} entries, worst {} at {:?}", r.checked, r.worst, r.worst_pair),
        ));
    }
    Ok(out)
}

pub fn shapes_suite() -> Result<Vec<Check>> {
    let cfg = ModelConfig::full();
    cfg.validate()?;
    let emb = cfg.embedding_trace();
    let enh = cfg.enhancement_trace();
    let enh_distinct: Vec<_> = enh.iter().fold(Vec::new(), |mut v, e| {
        if v.last() != Some(e) {
            v.push(*e);
        }
        v
    });
    Ok(vec![
        Check::exact(
            "embedding trace",
            emb == [(35, 201), (12, 101), (4, 51), (4, 51), (4, 26)],
            format!("{emb:?}"),
        ),
        Check::exact("embedding width", cfg.emb_blocks.last().map(|b| b.channels) == Some(512), "512"),
        Check::exact(
            "enhancement trace",
            enh_distinct == [(200, 201), (100, 101), (50, 51), (25, 26)] && enh.len() == 9,
            format!("{enh:?}"),
        ),
        Check::exact("flatten width", cfg.flatten_width() == 332_800, format!("{}", cfg.flatten_width())),
        Check::exact("output width", cfg.freq_bins == 201, format!("{}", cfg.freq_bins)),
    ])
}

fn random_wave(len: usize, rng: &mut ChaCha8Rng) -> Waveform {
    Waveform::from_samples((0..len).map(|_| rng.random_range(-0.9f32..0.9)).collect()).expect("finite")
}

/// Relative RMS of `a - b` over `range`.
pub fn rel_rms(a: &[f32], b: &[f32], range: std::ops::Range<usize>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in range {
        let d = a[i] as f64 - b[i] as f64;
        num += d * d;
        den += (b[i] as f64).powi(2);
    }
    (num / den.max(1e-300)).sqrt()
}

pub fn dsp_suite() -> Result<Vec<Check>> {
    let framing = Framing::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_rt: f64 = 0.0;
    let mut worst_log: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(2_000..6_000);
        let w = random_wave(len, &mut rng);
        let spec = dsp::stft(&w, framing)?;
        let back = dsp::istft(&spec.magnitudes(), &dsp::phase(&spec))?;
        let interior = framing.frame_len..back.len() - framing.frame_len;
        worst_rt = worst_rt.max(rel_rms(back.samples(), w.samples(), interior));
        let mags = spec.magnitudes();
        let logs = dsp::log_magnitude(&spec);
        for (m, l) in mags.data().iter().zip(logs.data()) {
            let err = (dsp::inverse_log_mag(*l) - m).abs() / m.max(1.0);
            worst_log = worst_log.max(err);
        }
    }
    Ok(vec![
        Check::below("istft(stft(x)) interior rel RMS (100 waveforms)", worst_rt, 1e-3, ""),
        Check::below("exp(log_magnitude) - 1e-7 recovers |X|", worst_log, 1e-6, "relative to max(|X|, 1)"),
    ])
}

pub fn metrics_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let clean = random_wave(8_000, &mut rng);
    let s = metrics::seg_snr(&clean, &clean)?;
    let l = metrics::lsd(&clean, &clean)?;
    let (mut worst_s, mut worst_l): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let len = rng.random_range(1_000..4_000);
        let c = random_wave(len, &mut rng);
        let scale = rng.random_range(0.01f32..2.0);
        let e = Waveform::from_samples(
            c.samples().iter().map(|&v| v + scale * rng.random_range(-1.0f32..1.0)).collect(),
        )?;
        worst_s = worst_s.max((metrics::seg_snr(&c, &e)? - metrics::reference::seg_snr(c.samples(), e.samples())).abs());
        worst_l = worst_l.max((metrics::lsd(&c, &e)? - metrics::reference::lsd(c.samples(), e.samples())).abs());
    }
    Ok(vec![
        Check::below("seg_snr(clean, clean) - 35", (s - 35.0).abs(), 1e-12, format!("{s}")),
        Check::below("lsd(clean, clean)", l.abs(), 1e-12, format!("{l}")),
        Check::below("seg_snr vs scalar oracle (100 pairs)", worst_s, 1e-6, ""),
        Check::below("lsd vs scalar oracle (100 pairs)", worst_l, 1e-6, ""),
    ])
}
