//! Full-utterance inference by hop-1 sliding windows over the spectrogram.

use noisecond_autodiff::Tensor;

use crate::dsp::{log_magnitude, phase, reconstruct, stft_samples, LogMagSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::model::Model;

/// Windows per forward pass when none is given.
pub const DEFAULT_WINDOW_BATCH: usize = 64;

/// Enhances `noisy` given an environment-only `hint` recorded in the same
/// place. The hint may be omitted only for models that ignore it.
pub fn enhance_utterance(model: &mut Model<f32>, noisy: &Waveform, hint: Option<&Waveform>) -> Result<Waveform> {
    enhance_utterance_batched(model, noisy, hint, DEFAULT_WINDOW_BATCH)
}

/// [`enhance_utterance`] with an explicit number of windows per forward pass.
/// The result does not depend on `batch`.
pub fn enhance_utterance_batched(
    model: &mut Model<f32>,
    noisy: &Waveform,
    hint: Option<&Waveform>,
    batch: usize,
) -> Result<Waveform> {
    if batch == 0 {
        return Err(Error::InvalidConfig("window batch must be positive".into()));
    }
    let cfg = model.config().clone();
    let framing = cfg.framing()?;
    let (n, f, c) = (cfg.context, cfg.freq_bins, cfg.central());
    let len = noisy.len();
    let frames = len / framing.hop + 1;
    let pad = framing.frame_len / 2;
    if len <= pad || frames < n {
        return Err(Error::InputTooShort(format!(
            "{len} samples give {frames} frames; the model needs {n} (at least {} samples)",
            ((n - 1) * framing.hop).max(pad + 1)
        )));
    }

    let span = framing.span(frames);
    let mut padded = reflect_pad(noisy.samples(), pad, span.saturating_sub(pad + len).min(len - 1));
    padded.resize(span, 0.0);
    let spec = stft_samples(&padded, framing)?;
    debug_assert_eq!(spec.frames(), frames);
    let logmag = log_magnitude(&spec);
    let noisy_phase = phase(&spec);

    let hint_tensor = match hint {
        Some(h) => {
            let need = framing.span(cfg.hint);
            if h.len() < need {
                return Err(Error::InputTooShort(format!(
                    "noise hint has {} samples, {} frames need {need}",
                    h.len(),
                    cfg.hint
                )));
            }
            let s = log_magnitude(&stft_samples(&h.samples()[..need], framing)?);
            Tensor::new(vec![1, 1, cfg.hint, f], s.into_data())?
        }
        None if model.reads_noise() => {
            return Err(Error::ContractViolation("this model needs a noise hint".into()));
        }
        None => Tensor::zeros(vec![1, 1, cfg.hint, f]),
    };
    let prepared = model.prepare_noise(&hint_tensor)?;

    // Frame t of the output is the centre of rows t..t+n of the padded spectrogram.
    let rows = reflect_rows(logmag.data(), f, c, n - 1 - c);
    let mut out = Vec::with_capacity(frames * f);
    for start in (0..frames).step_by(batch) {
        let b = batch.min(frames - start);
        let mut window = Vec::with_capacity(b * n * f);
        for t in start..start + b {
            window.extend_from_slice(&rows[t * f..(t + n) * f]);
        }
        let enhanced = model.predict_prepared(&Tensor::new(vec![b, 1, n, f], window)?, &prepared)?;
        out.extend_from_slice(enhanced.data());
    }
    let enhanced = LogMagSpectrogram::new(framing, frames, out)?;
    let wave = reconstruct(&enhanced, &noisy_phase)?;
    Waveform::new(wave.samples()[pad..pad + len].to_vec(), noisy.sample_rate())
}

/// Mirror padding that excludes the edge sample.
fn reflect_pad(x: &[f32], left: usize, right: usize) -> Vec<f32> {
    let n = x.len();
    debug_assert!(left < n && right < n);
    (1..=left)
        .rev()
        .map(|i| x[i])
        .chain(x.iter().copied())
        .chain((1..=right).map(|i| x[n - 1 - i]))
        .collect()
}

/// Mirror padding of a row-major `frames x width` matrix along its rows.
fn reflect_rows(data: &[f32], width: usize, top: usize, bottom: usize) -> Vec<f32> {
    let frames = data.len() / width;
    let row = |t: usize| &data[t * width..(t + 1) * width];
    let mut out = Vec::with_capacity((frames + top + bottom) * width);
    for i in (1..=top).rev() {
        out.extend_from_slice(row(i));
    }
    out.extend_from_slice(data);
    for i in 1..=bottom {
        out.extend_from_slice(row(frames - 1 - i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_pad_mirrors_without_edge() {
        assert_eq!(reflect_pad(&[1.0, 2.0, 3.0, 4.0], 2, 3), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(reflect_pad(&[1.0, 2.0], 0, 0), vec![1.0, 2.0]);
    }

    #[test]
    fn reflect_rows_mirrors_frames() {
        let d = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
        assert_eq!(
            reflect_rows(&d, 2, 2, 1),
            vec![2.0, 2.5, 1.0, 1.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 1.0, 1.5]
        );
    }
}
