//! Segmental SNR and log-spectral distortion, plus per-SNR evaluation reports.

mod report;

use crate::dsp::{stft_samples, Framing, Waveform, LOG_EPS};
use crate::error::{Error, Result};

pub use report::{evaluate, BucketRow, MetricRow, MetricsReport, PairResult, SkippedPair};

pub const SEG_SNR_MIN: f64 = -10.0;
pub const SEG_SNR_MAX: f64 = 35.0;
const SILENT_FRAME: f64 = 1e-10;
const ERR_FLOOR: f64 = 1e-12;

/// 25 ms frames hopped by 10 ms at `sample_rate`.
pub fn seg_snr_framing(sample_rate: u32) -> (usize, usize) {
    let sr = sample_rate as f64;
    ((0.025 * sr).round() as usize, (0.010 * sr).round() as usize)
}

/// Mean of per-frame SNRs clamped to [-10, 35] dB, skipping silent clean frames.
pub fn seg_snr(clean: &Waveform, enhanced: &Waveform) -> Result<f64> {
    let n = clean.len().min(enhanced.len());
    let (c, e) = (&clean.samples()[..n], &enhanced.samples()[..n]);
    let (frame, hop) = seg_snr_framing(clean.sample_rate());
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start + frame <= n {
        let (mut sig, mut err) = (0.0f64, 0.0f64);
        for i in start..start + frame {
            let (cv, ev) = (c[i] as f64, e[i] as f64);
            sig += cv * cv;
            err += (cv - ev) * (cv - ev);
        }
        if sig >= SILENT_FRAME {
            total += (10.0 * (sig / (err + ERR_FLOOR)).log10()).clamp(SEG_SNR_MIN, SEG_SNR_MAX);
            count += 1;
        }
        start += hop;
    }
    if count == 0 {
        return Err(Error::DegenerateSignal(format!("no non-silent {frame}-sample frames in {n} samples")));
    }
    Ok(total / count as f64)
}

/// Mean over frames of the RMS (over bins) of `20 log10((|C| + eps) / (|E| + eps))`.
pub fn lsd(clean: &Waveform, enhanced: &Waveform) -> Result<f64> {
    let framing = Framing::default();
    let n = clean.len().min(enhanced.len());
    if n < framing.frame_len {
        return Err(Error::DegenerateSignal(format!("{n} overlapping samples, need {}", framing.frame_len)));
    }
    let c = stft_samples(&clean.samples()[..n], framing)?.magnitudes();
    let e = stft_samples(&enhanced.samples()[..n], framing)?.magnitudes();
    let bins = framing.bins();
    let mut total = 0.0;
    for t in 0..c.frames() {
        let mean_sq = c
            .frame(t)
            .iter()
            .zip(e.frame(t))
            .map(|(a, b)| (20.0 * ((a + LOG_EPS) / (b + LOG_EPS)).log10()).powi(2))
            .sum::<f64>()
            / bins as f64;
        total += mean_sq.sqrt();
    }
    Ok(total / c.frames() as f64)
}

/// Direct scalar implementations used as oracles for the fast paths above.
pub mod reference {
    use std::f64::consts::PI;

    /// Frame-by-frame segmental SNR at 400/160 framing.
    pub fn seg_snr(clean: &[f32], enhanced: &[f32]) -> f64 {
        let n = clean.len().min(enhanced.len());
        let mut vals = Vec::new();
        for f in 0.. {
            let s = f * 160;
            if s + 400 > n {
                break;
            }
            let sig: f64 = (s..s + 400).map(|i| (clean[i] as f64).powi(2)).sum();
            let err: f64 = (s..s + 400).map(|i| (clean[i] as f64 - enhanced[i] as f64).powi(2)).sum();
            if sig < 1e-10 {
                continue;
            }
            let snr = 10.0 * (sig / (err + 1e-12)).log10();
            vals.push(snr.clamp(-10.0, 35.0));
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// Periodic-Hann direct DFT magnitudes, then the LSD double loop.
    pub fn lsd(clean: &[f32], enhanced: &[f32]) -> f64 {
        let n = clean.len().min(enhanced.len());
        let frames = (n - 400) / 160 + 1;
        let win: Vec<f64> = (0..400).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / 400.0).cos()).collect();
        let mag = |x: &[f32], start: usize, k: usize| -> f64 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, w) in win.iter().enumerate() {
                let v = x[start + i] as f64 * w;
                let a = -2.0 * PI * (k * i) as f64 / 400.0;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        };
        let mut total = 0.0;
        for t in 0..frames {
            let mut acc = 0.0;
            for k in 0..201 {
                let d = 20.0 * ((mag(clean, t * 160, k) + 1e-7) / (mag(enhanced, t * 160, k) + 1e-7)).log10();
                acc += d * d;
            }
            total += (acc / 201.0).sqrt();
        }
        total / frames as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(seed: u64, len: usize, amp: f32) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::from_samples((0..len).map(|_| rng.random_range(-amp..amp)).collect()).unwrap()
    }

    fn add(a: &Waveform, b: &Waveform, alpha: f32) -> Waveform {
        Waveform::from_samples(a.samples().iter().zip(b.samples()).map(|(x, y)| x + alpha * y).collect()).unwrap()
    }

    #[test]
    fn identical_signals_hit_the_clamp_and_zero_lsd() {
        let c = wave(1, 4000, 0.5);
        assert_eq!(seg_snr(&c, &c).unwrap(), 35.0);
        assert_eq!(lsd(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn strong_noise_hits_the_floor() {
        let c = wave(2, 4000, 0.01);
        let n = wave(3, 4000, 1.0);
        assert_eq!(seg_snr(&c, &add(&c, &n, 1.0)).unwrap(), -10.0);
    }

    #[test]
    fn known_frame_errors() {
        // Two full frames over 560 samples; the error energy differs per frame.
        let c = Waveform::from_samples(vec![0.5; 560]).unwrap();
        let e = Waveform::from_samples((0..560).map(|i| if i < 160 { 0.4 } else { 0.5 }).collect()).unwrap();
        let sig = 400.0 * 0.25;
        let err0 = 160.0 * (0.1f64 as f32 as f64).powi(2);
        let f0 = 10.0 * (sig / (err0 + 1e-12)).log10();
        let want = (f0 + 35.0) / 2.0;
        let got = seg_snr(&c, &e).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn silent_frames_are_skipped_and_all_silent_errors() {
        let mut s = vec![0.0f32; 800];
        s[700] = 0.5;
        let c = Waveform::from_samples(s).unwrap();
        let e = Waveform::from_samples(vec![0.0; 800]).unwrap();
        let direct = reference::seg_snr(c.samples(), e.samples());
        assert_eq!(seg_snr(&c, &e).unwrap(), direct);
        let z = Waveform::from_samples(vec![0.0; 800]).unwrap();
        assert!(matches!(seg_snr(&z, &z), Err(Error::DegenerateSignal(_))));
        let short = Waveform::from_samples(vec![0.1; 100]).unwrap();
        assert!(matches!(lsd(&short, &short), Err(Error::DegenerateSignal(_))));
    }

    #[test]
    fn tenfold_magnitude_is_twenty_db() {
        let c = wave(4, 3000, 0.5);
        let e = Waveform::from_samples(c.samples().iter().map(|v| v * 10.0).collect()).unwrap();
        assert!((lsd(&c, &e).unwrap() - 20.0).abs() < 1e-3);
    }

    #[test]
    fn fast_paths_match_oracles() {
        for seed in 0..10 {
            let c = wave(seed, 2500, 0.5);
            let e = add(&c, &wave(seed + 100, 2500, 0.3), 1.0);
            assert!((seg_snr(&c, &e).unwrap() - reference::seg_snr(c.samples(), e.samples())).abs() < 1e-6);
            assert!((lsd(&c, &e).unwrap() - reference::lsd(c.samples(), e.samples())).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn bounded_and_monotone_in_noise(seed in 0u64..100) {
            let c = wave(seed, 2400, 0.5);
            let n = wave(seed + 1000, 2400, 0.5);
            let mut prev = f64::INFINITY;
            for alpha in [0.0f32, 0.01, 0.05, 0.1, 0.3, 1.0, 3.0, 10.0] {
                let e = add(&c, &n, alpha);
                let s = seg_snr(&c, &e).unwrap();
                prop_assert!((SEG_SNR_MIN..=SEG_SNR_MAX).contains(&s));
                prop_assert!(s <= prev + 1e-9);
                prop_assert!(lsd(&c, &e).unwrap() >= 0.0);
                prev = s;
            }
        }
    }
}
