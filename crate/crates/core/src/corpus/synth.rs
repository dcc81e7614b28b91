use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::split::assign_splits;
use super::{Corpus, NoiseRecording, SpeechUtterance};
use crate::dsp::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Tones,
    BandNoise,
    /// Alternates tones and band noise.
    Mixed,
}

/// What makes one synthetic environment recognisable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvSignature {
    Tone { freq_hz: f64 },
    Band { lo_hz: f64, hi_hz: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub environments: usize,
    pub utterances: usize,
    pub sample_rate: u32,
    pub speech_secs: f64,
    pub noise_secs: f64,
    pub env_kind: EnvKind,
    pub noise_ratios: (f64, f64, f64),
    pub speech_ratios: (f64, f64, f64),
    /// Smallest gap between two tone environments, in Hz.
    pub min_tone_gap_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            environments: 50,
            utterances: 100,
            sample_rate: 16_000,
            speech_secs: 1.0,
            noise_secs: 3.0,
            env_kind: EnvKind::Mixed,
            noise_ratios: (0.8, 0.1, 0.1),
            speech_ratios: (0.8, 0.1, 0.1),
            min_tone_gap_hz: 25.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.environments == 0 || self.utterances == 0 {
            return Err(Error::InvalidConfig("need at least one environment and utterance".into()));
        }
        if self.sample_rate < 16_000 {
            return Err(Error::InvalidConfig("synthetic corpus needs a sample rate of at least 16 kHz".into()));
        }
        if !(self.speech_secs > 0.0 && self.noise_secs > 0.0) {
            return Err(Error::InvalidConfig("durations must be positive".into()));
        }
        let tone_slots = (TONE_RANGE.1 - TONE_RANGE.0) / self.min_tone_gap_hz.max(1e-9);
        if self.env_kind != EnvKind::BandNoise && self.environments as f64 > tone_slots / 2.0 {
            return Err(Error::InvalidConfig(format!(
                "{} tone environments do not fit {} Hz apart",
                self.environments, self.min_tone_gap_hz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub signatures: BTreeMap<String, EnvSignature>,
}

const TONE_RANGE: (f64, f64) = (500.0, 7000.0);
const F0_RANGE: (f64, f64) = (100.0, 300.0);
const SPEECH_RMS: f64 = 0.1;
const NOISE_RMS: f64 = 0.1;

pub fn speech_id(i: usize) -> String {
    format!("utt{i:04}")
}

pub fn noise_id(i: usize) -> String {
    format!("env{i:04}")
}

/// Harmonic speech stand-ins and environment recordings with distinct signatures.
pub fn synth_corpus(config: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = config.sample_rate;

    let env_ids: Vec<String> = (0..config.environments).map(noise_id).collect();
    let utt_ids: Vec<String> = (0..config.utterances).map(speech_id).collect();
    let env_splits = assign_splits(&env_ids, config.noise_ratios, rng.random())?;
    let utt_splits = assign_splits(&utt_ids, config.speech_ratios, rng.random())?;

    let signatures = draw_signatures(config, &mut rng);
    let noise_len = (config.noise_secs * sr as f64).round() as usize;
    let mut noise = Vec::with_capacity(config.environments);
    for (id, sig) in env_ids.iter().zip(&signatures) {
        let samples = match *sig {
            EnvSignature::Tone { freq_hz } => tone(freq_hz, noise_len, sr, &mut rng),
            EnvSignature::Band { lo_hz, hi_hz } => band_noise(lo_hz, hi_hz, noise_len, sr, &mut rng),
        };
        noise.push(NoiseRecording {
            id: id.clone(),
            waveform: Arc::new(Waveform::new(samples, sr)?),
            split: env_splits[id],
        });
    }

    let speech_len = (config.speech_secs * sr as f64).round() as usize;
    let mut speech = Vec::with_capacity(config.utterances);
    for id in &utt_ids {
        speech.push(SpeechUtterance {
            id: id.clone(),
            waveform: Arc::new(Waveform::new(harmonic_speech(speech_len, sr, &mut rng), sr)?),
            split: utt_splits[id],
        });
    }

    Ok(SynthCorpus {
        corpus: Corpus { speech, noise },
        signatures: env_ids.into_iter().zip(signatures).collect(),
    })
}

fn draw_signatures(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<EnvSignature> {
    let mut tones: Vec<f64> = Vec::new();
    let mut bands: Vec<(f64, f64)> = Vec::new();
    (0..config.environments)
        .map(|i| {
            let use_tone = match config.env_kind {
                EnvKind::Tones => true,
                EnvKind::BandNoise => false,
                EnvKind::Mixed => i % 2 == 0,
            };
            if use_tone {
                loop {
                    let f = rng.random_range(TONE_RANGE.0..=TONE_RANGE.1);
                    if tones.iter().all(|t| (t - f).abs() >= config.min_tone_gap_hz) {
                        tones.push(f);
                        return EnvSignature::Tone { freq_hz: f };
                    }
                }
            } else {
                loop {
                    let width = rng.random_range(300.0..1500.0);
                    let lo = rng.random_range(200.0..7800.0 - width);
                    let b = (lo, lo + width);
                    if !bands.contains(&b) {
                        bands.push(b);
                        return EnvSignature::Band { lo_hz: b.0, hi_hz: b.1 };
                    }
                }
            }
        })
        .collect()
}

fn tone(freq: f64, len: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let phase = rng.random_range(0.0..TAU);
    let amp = NOISE_RMS * std::f64::consts::SQRT_2;
    (0..len)
        .map(|i| (amp * (TAU * freq * i as f64 / sr as f64 + phase).sin()) as f32)
        .collect()
}

/// White Gaussian noise with every DFT bin outside `[lo, hi]` removed.
fn band_noise(lo: f64, hi: f64, len: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * sr as f64 / len as f64;
        if f < lo || f > hi {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
    scale_to_rms(&re, NOISE_RMS)
}

/// A harmonic comb on a random fundamental under a syllable-like envelope.
fn harmonic_speech(len: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let f0 = rng.random_range(F0_RANGE.0..=F0_RANGE.1);
    let nyq_guard = 0.47 * sr as f64;
    let harmonics: Vec<(f64, f64, f64)> = (1..)
        .map(|k| k as f64 * f0)
        .take_while(|&f| f < nyq_guard)
        .enumerate()
        .map(|(i, f)| (f, rng.random_range(0.5..1.0) / (i + 1) as f64, rng.random_range(0.0..TAU)))
        .collect();

    // Envelope knots every 80-250 ms, interpolated with a raised cosine.
    let mut knots = vec![(0usize, rng.random_range(0.05..1.0))];
    while knots.last().unwrap().0 < len {
        let step = (rng.random_range(0.08..0.25) * sr as f64) as usize;
        knots.push((knots.last().unwrap().0 + step.max(1), rng.random_range(0.05..1.0)));
    }
    let mut envelope = Vec::with_capacity(len);
    let mut j = 0;
    for i in 0..len {
        while knots[j + 1].0 <= i {
            j += 1;
        }
        let (a, b) = (knots[j], knots[j + 1]);
        let t = (i - a.0) as f64 / (b.0 - a.0) as f64;
        let w = 0.5 - 0.5 * (std::f64::consts::PI * t).cos();
        envelope.push(a.1 + (b.1 - a.1) * w);
    }

    let raw: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sr as f64;
            envelope[i] * harmonics.iter().map(|&(f, a, p)| a * (TAU * f * t + p).sin()).sum::<f64>()
        })
        .collect();
    scale_to_rms(&raw, SPEECH_RMS)
}

fn scale_to_rms(x: &[f64], target: f64) -> Vec<f32> {
    let r = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    let g = if r > 0.0 { target / r } else { 0.0 };
    x.iter().map(|v| (v * g) as f32).collect()
}
