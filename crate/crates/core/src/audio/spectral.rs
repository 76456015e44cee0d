//! Short-time spectra, mel cepstra and chroma.

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};

use super::wav::AudioBuffer;
use crate::{Error, Result};

pub const N_MELS: usize = 40;
/// Floor applied to mel energies before the log.
pub const LOG_FLOOR: f64 = 1e-10;

/// Frame geometry for a given sample rate and hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub hop: usize,
    pub window: usize,
}

impl Framing {
    /// Window is the next power of two at or above twice the hop.
    pub fn new(sample_rate: u32, hop_seconds: f64) -> Result<Self> {
        let hop = (hop_seconds * sample_rate as f64).round() as usize;
        if hop == 0 {
            return Err(Error::Config(format!(
                "analysis hop {hop_seconds}s is below one sample at {sample_rate} Hz"
            )));
        }
        Ok(Framing {
            hop,
            window: (2 * hop).next_power_of_two(),
        })
    }

    /// Frames are centered at `t * hop`, zero padded at both ends.
    pub fn frame_count(&self, samples: usize) -> usize {
        samples / self.hop + 1
    }

    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Magnitude spectrogram, one row per frame.
pub fn magnitude_spectrogram(audio: &AudioBuffer, framing: Framing) -> Result<Vec<Vec<f64>>> {
    let n = audio.samples.len();
    if n < framing.window {
        return Err(Error::TooShort {
            needed: framing.window,
            got: n,
        });
    }
    let win = hann(framing.window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(framing.window);
    let half = framing.window / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); framing.window];
    let mut out = Vec::with_capacity(framing.frame_count(n));
    for t in 0..framing.frame_count(n) {
        let start = (t * framing.hop) as isize - half as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let s = if idx >= 0 && (idx as usize) < n {
                audio.samples[idx as usize]
            } else {
                0.0
            };
            *b = Complex::new(s * win[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..framing.bins()].iter().map(|c| c.norm()).collect());
    }
    Ok(out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale spanning 0 Hz to Nyquist.
pub fn mel_filterbank(sample_rate: u32, window: usize, n_mels: usize) -> Vec<Vec<f64>> {
    let bins = window / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / window as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = bin_hz(k);
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II, keeping the first `n_out` coefficients.
pub fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            s * scale
        })
        .collect()
}

/// Mel-frequency cepstral coefficients, frames x `n_coeff`.
pub fn mfcc(audio: &AudioBuffer, n_coeff: usize, hop_seconds: f64) -> Result<DMatrix<f64>> {
    if n_coeff == 0 || n_coeff > N_MELS {
        return Err(Error::Config(format!(
            "n_coeff must be in 1..={N_MELS}, got {n_coeff}"
        )));
    }
    let framing = Framing::new(audio.sample_rate, hop_seconds)?;
    let spec = magnitude_spectrogram(audio, framing)?;
    let bank = mel_filterbank(audio.sample_rate, framing.window, N_MELS);
    let mut out = DMatrix::zeros(spec.len(), n_coeff);
    for (t, mags) in spec.iter().enumerate() {
        let log_mel: Vec<f64> = bank
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(mags).map(|(w, m)| w * m * m).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        for (c, v) in dct2(&log_mel, n_coeff).into_iter().enumerate() {
            out[(t, c)] = v;
        }
    }
    Ok(out)
}

/// Regression deltas over `±2` frames with edge replication.
pub fn delta(x: &DMatrix<f64>) -> DMatrix<f64> {
    const N: isize = 2;
    let rows = x.nrows() as isize;
    let denom = 2.0 * (1..=N).map(|n| (n * n) as f64).sum::<f64>();
    DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
        let at = |i: isize| x[(i.clamp(0, rows - 1) as usize, c)];
        (1..=N)
            .map(|n| n as f64 * (at(r as isize + n) - at(r as isize - n)))
            .sum::<f64>()
            / denom
    })
}

/// Twelve-bin pitch-class energy folded from STFT bins above 55 Hz,
/// normalized per frame to unit maximum.
pub fn chroma(audio: &AudioBuffer, hop_seconds: f64) -> Result<DMatrix<f64>> {
    let framing = Framing::new(audio.sample_rate, hop_seconds)?;
    let spec = magnitude_spectrogram(audio, framing)?;
    let mut out = DMatrix::zeros(spec.len(), 12);
    for (t, mags) in spec.iter().enumerate() {
        for (k, m) in mags.iter().enumerate().skip(1) {
            let f = k as f64 * audio.sample_rate as f64 / framing.window as f64;
            if f < 55.0 {
                continue;
            }
            let pc = (12.0 * (f / 440.0).log2()).round().rem_euclid(12.0) as usize;
            out[(t, pc)] += m * m;
        }
        let mx = out.row(t).max();
        if mx > 0.0 {
            out.row_mut(t).scale_mut(1.0 / mx);
        }
    }
    Ok(out)
}
