//! 16-bit PCM mono WAV files at 16 kHz.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

const SCALE: f32 = 32768.0;

fn spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: DEFAULT_SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

/// Reads a mono 16 kHz PCM16 file into amplitudes `sample / 32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    })?;
    let s = reader.spec();
    if s.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            s.channels
        )));
    }
    if s.sample_rate != DEFAULT_SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!(
            "{}: sample rate {} Hz, only {DEFAULT_SAMPLE_RATE} Hz is supported",
            path.display(),
            s.sample_rate
        )));
    }
    if s.bits_per_sample != 16 || s.sample_format != SampleFormat::Int {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {}-bit {:?} samples, only 16-bit PCM is supported",
            path.display(),
            s.bits_per_sample,
            s.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::from_samples(samples)
}

/// Quantises to PCM16, clipping amplitudes to `[-1, 1]` first.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if w.sample_rate() != DEFAULT_SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!(
            "cannot write {} Hz audio, only {DEFAULT_SAMPLE_RATE} Hz",
            w.sample_rate()
        )));
    }
    let mut writer = WavWriter::create(path, spec()).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    for &s in w.samples() {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn quantize(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * SCALE).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16
}
