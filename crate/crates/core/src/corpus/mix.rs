use rand::Rng;

use crate::dsp::{rms, Waveform};
use crate::error::{Error, Result};

/// A mixture together with the scaled noise that went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixed: Waveform,
    pub scaled_noise: Vec<f64>,
    pub gain: f64,
}

/// `speech + g * noise` with `g = rms(speech) / (rms(noise) * 10^(snr/20))`,
/// both RMS values taken over the full segments.
pub fn mix_components(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Mixture> {
    if speech.len() != noise.len() {
        return Err(Error::Shape(format!(
            "speech has {} samples, noise has {}",
            speech.len(),
            noise.len()
        )));
    }
    let (rs, rn) = (speech.rms(), noise.rms());
    if rs <= 0.0 || rn <= 0.0 {
        return Err(Error::DegenerateSignal(format!(
            "zero-RMS input (speech {rs}, noise {rn})"
        )));
    }
    let gain = rs / (rn * 10f64.powf(snr_db / 20.0));
    let scaled_noise: Vec<f64> = noise.samples().iter().map(|&n| n as f64 * gain).collect();
    let mixed = speech
        .samples()
        .iter()
        .zip(&scaled_noise)
        .map(|(&s, &n)| (s as f64 + n) as f32)
        .collect();
    Ok(Mixture {
        mixed: Waveform::new(mixed, speech.sample_rate())?,
        scaled_noise,
        gain,
    })
}

pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    mix_components(speech, noise, snr_db).map(|m| m.mixed)
}

/// `10 log10(P_speech / P_noise)` recomputed from the components.
pub fn realized_snr_db(speech: &[f32], scaled_noise: &[f64]) -> f64 {
    let pn = scaled_noise.iter().map(|v| v * v).sum::<f64>() / scaled_noise.len() as f64;
    20.0 * rms(speech).log10() - 10.0 * pn.log10()
}

/// Exactly `len` samples of `noise`: a random crop when it is longer, the
/// recording looped with wrap-around from the start when it is shorter.
pub fn fit_noise<R: Rng + ?Sized>(noise: &[f32], len: usize, rng: &mut R) -> Result<Vec<f32>> {
    if noise.is_empty() {
        return Err(Error::InputTooShort("empty noise recording".into()));
    }
    if noise.len() >= len {
        let start = rng.random_range(0..=noise.len() - len);
        Ok(noise[start..start + len].to_vec())
    } else {
        Ok(noise.iter().copied().cycle().take(len).collect())
    }
}
