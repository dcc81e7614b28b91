use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mix::{fit_noise, mix_components};
use super::{Corpus, NoiseRecording, SpeechUtterance, Split};
use crate::dsp::{log_magnitude, phase, stft_samples, Framing, LogMagSpectrogram, PhaseSpectrogram, Waveform};
use crate::error::{Error, Result};

/// Context and hint lengths in frames plus the framing they are measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpec {
    pub framing: Framing,
    pub context: usize,
    pub hint: usize,
}

impl SampleSpec {
    pub fn new(framing: Framing, context: usize, hint: usize) -> Result<Self> {
        if context == 0 || hint == 0 {
            return Err(Error::InvalidConfig("context and hint need at least one frame".into()));
        }
        Ok(SampleSpec { framing, context, hint })
    }

    pub fn central(&self) -> usize {
        self.context / 2
    }

    /// Samples covered by the mixed context window.
    pub fn mixed_len(&self) -> usize {
        self.framing.span(self.context)
    }

    pub fn hint_len(&self) -> usize {
        self.framing.span(self.hint)
    }

    /// Shortest noise recording that holds the mixed span and a disjoint hint.
    pub fn min_noise_len(&self) -> usize {
        self.mixed_len() + self.hint_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub noisy_segment: LogMagSpectrogram,
    pub noise_segment: LogMagSpectrogram,
    pub clean_frame: Vec<f32>,
    pub noisy_central_frame: Vec<f32>,
    pub noisy_phase: PhaseSpectrogram,
    pub snr_db: f64,
    /// Gain applied to the noise recording, for the mixed span and the hint alike.
    pub noise_gain: f64,
    pub noise_id: String,
    pub speech_id: String,
    /// First speech sample of the crop; always a multiple of the hop.
    pub speech_start: usize,
    /// Sample range of the noise recording mixed into the context.
    pub mixed_range: Range<usize>,
    /// Sample range of the noise recording used as the hint.
    pub hint_range: Range<usize>,
}

fn pick<'a, T, R: Rng + ?Sized>(items: &'a [T], rng: &mut R, what: &str) -> Result<&'a T> {
    if items.is_empty() {
        return Err(Error::EmptyCorpus(format!("no {what} to sample from")));
    }
    Ok(&items[rng.random_range(0..items.len())])
}

/// The hint at the level the mixed-in noise was given, as a device
/// recording the same environment would capture it.
fn scaled(x: &[f32], gain: f64) -> Vec<f32> {
    x.iter().map(|&v| (v as f64 * gain) as f32).collect()
}

/// Draws one example: a random utterance, noise recording and SNR, a
/// hop-aligned speech crop and two disjoint noise spans.
pub fn sample_training_example<R: Rng + ?Sized>(
    speech: &[SpeechUtterance],
    noise: &[NoiseRecording],
    snrs: &[f64],
    spec: &SampleSpec,
    rng: &mut R,
) -> Result<TrainingExample> {
    let utt = pick(speech, rng, "speech")?;
    let rec = pick(noise, rng, "noise")?;
    let snr_db = *pick(snrs, rng, "SNRs")?;
    let (mixed_len, hint_len) = (spec.mixed_len(), spec.hint_len());
    let hop = spec.framing.hop;

    if utt.waveform.len() < mixed_len {
        return Err(Error::InputTooShort(format!(
            "utterance {} has {} samples, context needs {mixed_len}",
            utt.id,
            utt.waveform.len()
        )));
    }
    if rec.waveform.len() < spec.min_noise_len() {
        return Err(Error::InputTooShort(format!(
            "noise {} has {} samples, context plus hint needs {}",
            rec.id,
            rec.waveform.len(),
            spec.min_noise_len()
        )));
    }

    let speech_start = hop * rng.random_range(0..=(utt.waveform.len() - mixed_len) / hop);
    let slack = rec.waveform.len() - mixed_len - hint_len;
    let gap_before = rng.random_range(0..=slack);
    let gap_between = rng.random_range(0..=slack - gap_before);
    let (mixed_range, hint_range) = if rng.random_bool(0.5) {
        let h = gap_before..gap_before + hint_len;
        let m0 = h.end + gap_between;
        (m0..m0 + mixed_len, h)
    } else {
        let m = gap_before..gap_before + mixed_len;
        let h0 = m.end + gap_between;
        (m, h0..h0 + hint_len)
    };

    let sr = utt.waveform.sample_rate();
    let clean = &utt.waveform.samples()[speech_start..speech_start + mixed_len];
    let clean_w = Waveform::new(clean.to_vec(), sr)?;
    let noise_w = Waveform::new(rec.waveform.samples()[mixed_range.clone()].to_vec(), sr)?;
    let mixture = mix_components(&clean_w, &noise_w, snr_db)?;

    let noisy_spec = stft_samples(mixture.mixed.samples(), spec.framing)?;
    let noisy_segment = log_magnitude(&noisy_spec);
    let noisy_phase = phase(&noisy_spec);
    let hint = scaled(&rec.waveform.samples()[hint_range.clone()], mixture.gain);
    let noise_segment = log_magnitude(&stft_samples(&hint, spec.framing)?);

    let c = spec.central();
    let off = c * hop;
    let clean_frame = log_magnitude(&stft_samples(&clean[off..off + spec.framing.frame_len], spec.framing)?)
        .into_data();
    let noisy_central_frame = noisy_segment.frame(c).to_vec();

    Ok(TrainingExample {
        noisy_segment,
        noise_segment,
        clean_frame,
        noisy_central_frame,
        noisy_phase,
        snr_db,
        noise_gain: mixture.gain,
        noise_id: rec.id.clone(),
        speech_id: utt.id.clone(),
        speech_start,
        mixed_range,
        hint_range,
    })
}

/// Sampler over the recordings of a corpus that are long enough for `spec`.
#[derive(Debug, Clone)]
pub struct ExampleSampler {
    speech: Vec<SpeechUtterance>,
    noise: Vec<NoiseRecording>,
    snrs: Vec<f64>,
    spec: SampleSpec,
}

const MAX_REDRAWS: usize = 64;

impl ExampleSampler {
    pub fn new(corpus: &Corpus, snrs: &[f64], spec: SampleSpec) -> Result<Self> {
        let speech: Vec<_> = corpus
            .speech
            .iter()
            .filter(|s| s.waveform.len() >= spec.mixed_len())
            .cloned()
            .collect();
        let noise: Vec<_> = corpus
            .noise
            .iter()
            .filter(|n| n.waveform.len() >= spec.min_noise_len())
            .cloned()
            .collect();
        if speech.is_empty() || noise.is_empty() || snrs.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "{} usable utterances, {} usable noise recordings, {} SNRs",
                speech.len(),
                noise.len(),
                snrs.len()
            )));
        }
        Ok(ExampleSampler {
            speech,
            noise,
            snrs: snrs.to_vec(),
            spec,
        })
    }

    pub fn spec(&self) -> &SampleSpec {
        &self.spec
    }

    /// Draws an example, redrawing silent crops.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrainingExample> {
        let mut last = None;
        for _ in 0..MAX_REDRAWS {
            match sample_training_example(&self.speech, &self.noise, &self.snrs, &self.spec, rng) {
                Err(e @ Error::DegenerateSignal(_)) => last = Some(e),
                other => return other,
            }
        }
        Err(last.expect("at least one draw"))
    }

    pub fn sample_many<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<TrainingExample>> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub clean: Waveform,
    pub noisy: Waveform,
    pub noise_segment: Waveform,
    pub snr_db: f64,
    pub speech_id: String,
    pub noise_id: String,
    /// Sample range of the noise recording used as the hint.
    pub hint_range: Range<usize>,
}

/// One fixed (noise, SNR) per utterance, SNRs assigned round-robin. The hint
/// is cut first and the mixing noise is looped from the rest of the recording.
pub fn build_eval_set(
    speech: &[SpeechUtterance],
    noise: &[NoiseRecording],
    snrs: &[f64],
    spec: &SampleSpec,
    seed: u64,
) -> Result<Vec<EvalPair>> {
    if speech.is_empty() || noise.is_empty() || snrs.is_empty() {
        return Err(Error::EmptyCorpus("evaluation needs speech, noise and SNRs".into()));
    }
    if let Some(n) = noise.iter().find(|n| n.split == Split::Train) {
        return Err(Error::SplitViolation(format!("noise {} belongs to the training split", n.id)));
    }
    if let Some(s) = speech.iter().find(|s| s.split == Split::Train) {
        return Err(Error::SplitViolation(format!("utterance {} belongs to the training split", s.id)));
    }
    let hint_len = spec.hint_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    speech
        .iter()
        .enumerate()
        .map(|(i, utt)| {
            let snr_db = snrs[i % snrs.len()];
            let rec = &noise[rng.random_range(0..noise.len())];
            let ns = rec.waveform.samples();
            if ns.len() <= hint_len {
                return Err(Error::InputTooShort(format!(
                    "noise {} has {} samples, hint needs more than {hint_len}",
                    rec.id,
                    ns.len()
                )));
            }
            let h0 = rng.random_range(0..=ns.len() - hint_len);
            let hint_range = h0..h0 + hint_len;
            let rest: Vec<f32> = ns[hint_range.end..].iter().chain(&ns[..h0]).copied().collect();
            let sr = utt.waveform.sample_rate();
            let fitted = Waveform::new(fit_noise(&rest, utt.waveform.len(), &mut rng)?, sr)?;
            let mixture = mix_components(&utt.waveform, &fitted, snr_db)?;
            Ok(EvalPair {
                clean: (*utt.waveform).clone(),
                noisy: mixture.mixed,
                noise_segment: Waveform::new(scaled(&ns[hint_range.clone()], mixture.gain), sr)?,
                snr_db,
                speech_id: utt.id.clone(),
                noise_id: rec.id.clone(),
                hint_range,
            })
        })
        .collect()
}
