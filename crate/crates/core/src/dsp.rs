//! STFT analysis/synthesis and log-magnitude features.
//!
//! Frames start at sample 0 with no centre padding, so a signal of `len`
//! samples has `1 + (len - frame_len) / hop` frames. Analysis and synthesis
//! both use a periodic Hann window; synthesis is a weighted overlap-add
//! normalised by the summed squared window. The DFT runs in f64, features
//! are stored as f32.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Added to magnitudes before taking the log.
pub const LOG_EPS: f64 = 1e-7;
/// Floor of the summed squared window in overlap-add normalisation.
const OLA_FLOOR: f64 = 1e-8;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// 16 kHz waveform.
    pub fn from_samples(samples: Vec<f32>) -> Result<Self> {
        Self::new(samples, DEFAULT_SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Root-mean-square amplitude over the whole signal.
    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Waveform {
        Waveform {
            samples: self.samples[range].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

pub fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Frame length and hop in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Framing {
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for Framing {
    /// 25 ms frames shifted by 10 ms at 16 kHz.
    fn default() -> Self {
        Self {
            frame_len: 400,
            hop: 160,
        }
    }
}

impl Framing {
    pub fn new(frame_len: usize, hop: usize) -> Result<Self> {
        if frame_len == 0 || !frame_len.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "frame length must be even and positive, got {frame_len}"
            )));
        }
        if hop == 0 || hop > frame_len {
            return Err(Error::InvalidConfig(format!(
                "hop must be in 1..={frame_len}, got {hop}"
            )));
        }
        Ok(Self { frame_len, hop })
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of frames for a signal of `len` samples, if it holds at least one.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.frame_len).then(|| 1 + (len - self.frame_len) / self.hop)
    }

    /// Samples spanned by `frames` consecutive frames.
    pub fn span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub framing: Framing,
    frames: usize,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.framing.bins()
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let f = self.bins();
        &self.data[t * f..(t + 1) * f]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn magnitudes(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            framing: self.framing,
            frames: self.frames,
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }
}

/// Linear magnitudes, `frames x bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub framing: Framing,
    frames: usize,
    data: Vec<f64>,
}

impl MagnitudeSpectrogram {
    pub fn new(framing: Framing, frames: usize, data: Vec<f64>) -> Result<Self> {
        check_len(framing, frames, data.len())?;
        Ok(Self {
            framing,
            frames,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.framing.bins()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let f = self.bins();
        &self.data[t * f..(t + 1) * f]
    }
}

fn check_len(framing: Framing, frames: usize, len: usize) -> Result<()> {
    if frames == 0 || len != frames * framing.bins() {
        return Err(Error::Shape(format!(
            "{len} values do not form {frames} frames of {} bins",
            framing.bins()
        )));
    }
    Ok(())
}

/// Natural-log magnitudes `ln(|X| + 1e-7)`, `frames x bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMagSpectrogram {
    pub framing: Framing,
    frames: usize,
    data: Vec<f32>,
}

impl LogMagSpectrogram {
    pub fn new(framing: Framing, frames: usize, data: Vec<f32>) -> Result<Self> {
        check_len(framing, frames, data.len())?;
        Ok(Self {
            framing,
            frames,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.framing.bins()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let f = self.bins();
        &self.data[t * f..(t + 1) * f]
    }

    /// Frames `start..start + len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(Error::Shape(format!(
                "frames {start}..{} out of range for {} frames",
                start + len,
                self.frames
            )));
        }
        let f = self.bins();
        Self::new(
            self.framing,
            len,
            self.data[start * f..(start + len) * f].to_vec(),
        )
    }
}

/// Phases in `(-pi, pi]`, `frames x bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpectrogram {
    pub framing: Framing,
    frames: usize,
    data: Vec<f32>,
}

impl PhaseSpectrogram {
    pub fn new(framing: Framing, frames: usize, data: Vec<f32>) -> Result<Self> {
        check_len(framing, frames, data.len())?;
        Ok(Self {
            framing,
            frames,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.framing.bins()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let f = self.bins();
        &self.data[t * f..(t + 1) * f]
    }

    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(Error::Shape(format!(
                "frames {start}..{} out of range for {} frames",
                start + len,
                self.frames
            )));
        }
        let f = self.bins();
        Self::new(
            self.framing,
            len,
            self.data[start * f..(start + len) * f].to_vec(),
        )
    }
}

pub fn stft(w: &Waveform, framing: Framing) -> Result<ComplexSpectrogram> {
    stft_samples(w.samples(), framing)
}

pub fn stft_samples(x: &[f32], framing: Framing) -> Result<ComplexSpectrogram> {
    let Framing { frame_len, hop } = framing;
    let frames = framing.frame_count(x.len()).ok_or_else(|| {
        Error::InputTooShort(format!(
            "{} samples is shorter than one {frame_len}-sample frame",
            x.len()
        ))
    })?;
    let window = hann(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);
    let bins = framing.bins();
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    for t in 0..frames {
        let seg = &x[t * hop..t * hop + frame_len];
        for ((b, &s), &wv) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(s as f64 * wv, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(ComplexSpectrogram {
        framing,
        frames,
        data,
    })
}

pub fn log_magnitude(s: &ComplexSpectrogram) -> LogMagSpectrogram {
    LogMagSpectrogram {
        framing: s.framing,
        frames: s.frames,
        data: s
            .data
            .iter()
            .map(|c| (c.norm() + LOG_EPS).ln() as f32)
            .collect(),
    }
}

/// `arg(X)` with zero bins mapped to 0 and `-pi` folded onto `pi`.
pub fn phase(s: &ComplexSpectrogram) -> PhaseSpectrogram {
    PhaseSpectrogram {
        framing: s.framing,
        frames: s.frames,
        data: s.data.iter().map(|&c| wrap_phase(c) as f32).collect(),
    }
}

fn wrap_phase(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        return 0.0;
    }
    let a = c.im.atan2(c.re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Weighted overlap-add resynthesis from magnitudes and phases.
///
/// Output length is `(frames - 1) * hop + frame_len`.
pub fn istft(mag: &MagnitudeSpectrogram, ph: &PhaseSpectrogram) -> Result<Waveform> {
    if mag.frames != ph.frames || mag.framing != ph.framing {
        return Err(Error::Shape(format!(
            "magnitude has {} frames ({:?}), phase has {} frames ({:?})",
            mag.frames, mag.framing, ph.frames, ph.framing
        )));
    }
    let Framing { frame_len, hop } = mag.framing;
    let bins = mag.framing.bins();
    let window = hann(frame_len);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(frame_len);
    let out_len = mag.framing.span(mag.frames);
    let mut acc = vec![0.0f64; out_len];
    let mut norm = vec![0.0f64; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    let scale = 1.0 / frame_len as f64;
    for t in 0..mag.frames {
        let (m, p) = (mag.frame(t), ph.frame(t));
        for k in 0..bins {
            buf[k] = Complex64::from_polar(m[k], p[k] as f64);
        }
        for k in 1..frame_len - bins + 1 {
            buf[frame_len - k] = buf[k].conj();
        }
        ifft.process(&mut buf);
        let off = t * hop;
        for (i, (b, &wv)) in buf.iter().zip(&window).enumerate() {
            acc[off + i] += b.re * scale * wv;
            norm[off + i] += wv * wv;
        }
    }
    let samples = acc
        .iter()
        .zip(&norm)
        .map(|(&a, &n)| (a / n.max(OLA_FLOOR)) as f32)
        .collect();
    Waveform::from_samples(samples)
}

/// Inverse of [`log_magnitude`] on the magnitude path, then [`istft`].
pub fn reconstruct(enh: &LogMagSpectrogram, ph: &PhaseSpectrogram) -> Result<Waveform> {
    if enh.frames != ph.frames || enh.framing != ph.framing {
        return Err(Error::Shape(format!(
            "log-magnitude has {} frames, phase has {}",
            enh.frames, ph.frames
        )));
    }
    let mag = MagnitudeSpectrogram {
        framing: enh.framing,
        frames: enh.frames,
        data: enh.data.iter().map(|&v| inverse_log_mag(v)).collect(),
    };
    istft(&mag, ph)
}

/// `max(exp(v) - 1e-7, 0)`.
pub fn inverse_log_mag(v: f32) -> f64 {
    ((v as f64).exp() - LOG_EPS).max(0.0)
}
