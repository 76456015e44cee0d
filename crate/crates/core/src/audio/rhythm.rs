//! Onset strength, tempogram and beat picking.

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::spectral::{magnitude_spectrogram, Framing};
use super::wav::AudioBuffer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeatConfig {
    /// Seconds between analysis frames.
    pub hop: f64,
    /// Moving-average width applied to the onset envelope, in frames. 1 disables it.
    pub onset_smoothing: usize,
    /// Peaks must exceed `mean + threshold * std` of the surrounding window.
    pub threshold: f64,
    /// Width of that surrounding window, seconds.
    pub threshold_window: f64,
    /// Minimum spacing between accepted beats, seconds.
    pub min_gap: f64,
}

impl Default for BeatConfig {
    fn default() -> Self {
        BeatConfig {
            hop: 0.010,
            onset_smoothing: 1,
            threshold: 1.5,
            threshold_window: 3.0,
            min_gap: 0.25,
        }
    }
}

impl BeatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop > 0.0) || !(self.min_gap > self.hop) {
            return Err(Error::Config(format!(
                "beat gap {} must exceed analysis hop {}",
                self.min_gap, self.hop
            )));
        }
        if self.onset_smoothing == 0 {
            return Err(Error::Config(
                "onset smoothing must be at least 1 frame".into(),
            ));
        }
        Ok(())
    }
}

/// Half-wave rectified spectral flux, one value per analysis frame.
pub fn onset_envelope(audio: &AudioBuffer, cfg: &BeatConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let framing = Framing::new(audio.sample_rate, cfg.hop)?;
    let spec = magnitude_spectrogram(audio, framing)?;
    let mut env = vec![0.0; spec.len()];
    for t in 1..spec.len() {
        env[t] = spec[t]
            .iter()
            .zip(&spec[t - 1])
            .map(|(a, b)| (a - b).max(0.0))
            .sum();
    }
    if cfg.onset_smoothing > 1 {
        let w = cfg.onset_smoothing;
        let half = w / 2;
        let src = env.clone();
        for (t, e) in env.iter_mut().enumerate() {
            let lo = t.saturating_sub(half);
            let hi = (lo + w).min(src.len());
            *e = src[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        }
    }
    Ok(env)
}

/// Local autocorrelation of the onset envelope. Row `t` holds lags
/// `0..window` of the mean-removed segment centered on frame `t`,
/// normalized so lag 0 equals 1 (all zeros when the segment has no energy).
pub fn tempogram(envelope: &[f64], window: usize) -> Result<DMatrix<f64>> {
    if window < 2 {
        return Err(Error::Config(
            "tempogram window must be at least 2 frames".into(),
        ));
    }
    let n = envelope.len();
    let fft_len = (2 * window).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);
    let mut out = DMatrix::zeros(n, window);
    let half = window / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
    for t in 0..n {
        let start = t as isize - half as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + window as isize).max(0) as usize).min(n);
        let seg = &envelope[lo..hi];
        if seg.is_empty() {
            continue;
        }
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        for (i, v) in seg.iter().enumerate() {
            buf[(lo as isize - start) as usize + i] = Complex::new(v - mean, 0.0);
        }
        fwd.process(&mut buf);
        for b in buf.iter_mut() {
            *b = Complex::new(b.norm_sqr(), 0.0);
        }
        inv.process(&mut buf);
        let zero = buf[0].re;
        let energy: f64 = seg.iter().map(|v| v * v).sum();
        if zero <= 1e-12 * energy || zero <= f64::MIN_POSITIVE {
            continue;
        }
        for lag in 0..window {
            out[(t, lag)] = buf[lag].re / zero;
        }
    }
    Ok(out)
}

/// Strongest lag at or above `min_lag` in a tempogram row.
pub fn dominant_lag(row: &[f64], min_lag: usize) -> Option<usize> {
    row.iter()
        .enumerate()
        .skip(min_lag.max(1))
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Adaptive-threshold peak picking with greedy minimum-gap thinning.
/// Returns beat times in seconds, ascending.
pub fn detect_beats(envelope: &[f64], cfg: &BeatConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = envelope.len();
    if n == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let half = ((cfg.threshold_window / cfg.hop) / 2.0).round().max(1.0) as usize;
    // Prefix sums for the sliding mean and variance.
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, v) in envelope.iter().enumerate() {
        s1[i + 1] = s1[i] + v;
        s2[i + 1] = s2[i] + v * v;
    }
    let mut candidates: Vec<usize> = Vec::new();
    for t in 0..n {
        let v = envelope[t];
        if v <= 0.0 {
            continue;
        }
        let left_ok = t == 0 || v > envelope[t - 1];
        let right_ok = t + 1 == n || v >= envelope[t + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        let lo = t.saturating_sub(half);
        let hi = (t + half + 1).min(n);
        let cnt = (hi - lo) as f64;
        let mean = (s1[hi] - s1[lo]) / cnt;
        let var = ((s2[hi] - s2[lo]) / cnt - mean * mean).max(0.0);
        if v > mean + cfg.threshold * var.sqrt() {
            candidates.push(t);
        }
    }
    candidates.sort_by(|&a, &b| envelope[b].total_cmp(&envelope[a]).then(a.cmp(&b)));
    let mut kept: Vec<f64> = Vec::new();
    for t in candidates {
        let time = t as f64 * cfg.hop;
        if kept.iter().all(|&k| (k - time).abs() >= cfg.min_gap) {
            kept.push(time);
        }
    }
    kept.sort_by(f64::total_cmp);
    Ok(kept)
}
