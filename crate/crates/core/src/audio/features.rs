//! Token-rate audio feature stacks.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::rhythm::{detect_beats, onset_envelope, tempogram, BeatConfig};
use super::spectral::{chroma, delta, mfcc};
use super::wav::AudioBuffer;
use crate::motion::{read_matrix_bin, write_matrix_bin};
use crate::{Error, Result};

/// Motion frame rate and downsampling factor that define the token clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRate {
    pub fps: f64,
    pub downsample: usize,
}

impl TokenRate {
    pub fn token_hop(&self) -> f64 {
        self.downsample as f64 / self.fps
    }

    /// Number of whole token frames in `seconds`.
    pub fn tokens_in(&self, seconds: f64) -> usize {
        (seconds / self.token_hop() + 1e-9).floor() as usize
    }

    /// Token frame containing `seconds`.
    pub fn token_at(&self, seconds: f64) -> usize {
        (seconds / self.token_hop() + 1e-9).floor().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub beat: BeatConfig,
    pub n_mfcc: usize,
    pub chroma: bool,
    /// Tempogram analysis window, seconds.
    pub tempogram_window: f64,
    /// Lag axis is averaged into this many equal bands.
    pub tempogram_bands: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            beat: BeatConfig::default(),
            n_mfcc: 13,
            chroma: false,
            tempogram_window: 4.0,
            tempogram_bands: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureGroup {
    Mfcc,
    MfccDelta,
    Chroma,
    Onset,
    Tempogram,
    /// A concatenated stack read back from disk.
    Stack,
}

/// Token-rate feature channels plus detected beats.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub token_hop: f64,
    pub groups: Vec<(FeatureGroup, DMatrix<f64>)>,
    pub beats: Vec<f64>,
}

impl FeatureTrack {
    pub fn frame_count(&self) -> usize {
        self.groups.first().map_or(0, |g| g.1.nrows())
    }

    pub fn group(&self, g: FeatureGroup) -> Option<&DMatrix<f64>> {
        self.groups.iter().find(|(k, _)| *k == g).map(|(_, m)| m)
    }

    /// All groups side by side, in stored order.
    pub fn stacked(&self) -> DMatrix<f64> {
        let rows = self.frame_count();
        let cols: usize = self.groups.iter().map(|g| g.1.ncols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut c0 = 0;
        for (_, m) in &self.groups {
            out.columns_mut(c0, m.ncols()).copy_from(m);
            c0 += m.ncols();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let rows = self.frame_count();
        if self.groups.iter().any(|g| g.1.nrows() != rows) {
            return Err(Error::Invalid(
                "feature groups disagree on frame count".into(),
            ));
        }
        let duration = rows as f64 * self.token_hop;
        if self.beats.windows(2).any(|w| w[1] <= w[0])
            || self.beats.iter().any(|&b| b < 0.0 || b > duration)
        {
            return Err(Error::Invalid(
                "beat times must be increasing and in range".into(),
            ));
        }
        Ok(())
    }

    /// Writes `<stem>.feat` (binary matrix) and `<stem>.beats` (one time per line).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let f = std::fs::File::create(stem.with_extension("feat"))?;
        write_matrix_bin(std::io::BufWriter::new(f), &self.stacked())?;
        let mut b = std::io::BufWriter::new(std::fs::File::create(stem.with_extension("beats"))?);
        for t in &self.beats {
            writeln!(b, "{t}")?;
        }
        Ok(())
    }

    pub fn load(stem: &Path, token_hop: f64) -> Result<Self> {
        let m = read_matrix_bin(std::io::BufReader::new(std::fs::File::open(
            stem.with_extension("feat"),
        )?))?;
        let mut beats = Vec::new();
        let f = std::io::BufReader::new(std::fs::File::open(stem.with_extension("beats"))?);
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            beats.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(i + 1, format!("bad beat time {line:?}")))?,
            );
        }
        let track = FeatureTrack {
            token_hop,
            groups: vec![(FeatureGroup::Stack, m)],
            beats,
        };
        track.validate()?;
        Ok(track)
    }
}

/// Mean-pool fine frames (at `t * fine_hop`) into `frames` token frames of
/// width `token_hop`. Token frames with no fine frame repeat the previous row.
fn pool(fine: &DMatrix<f64>, fine_hop: f64, token_hop: f64, frames: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(frames, fine.ncols());
    let mut t = 0usize;
    for j in 0..frames {
        let end = (j + 1) as f64 * token_hop;
        let mut count = 0usize;
        while t < fine.nrows() && (t as f64 * fine_hop) < end - 1e-12 {
            let mut row = out.row_mut(j);
            row += fine.row(t);
            count += 1;
            t += 1;
        }
        if count > 0 {
            out.row_mut(j).scale_mut(1.0 / count as f64);
        } else if j > 0 {
            let prev = out.row(j - 1).into_owned();
            out.row_mut(j).copy_from(&prev);
        }
    }
    out
}

/// Token-rate feature stack with one lookahead frame: `tokens + 1` rows.
///
/// The token count is `floor(duration / token_hop)`. When `expected_tokens`
/// is given (the length of the paired motion), it may differ from the audio
/// count by at most one token.
pub fn build_feature_stack(
    audio: &AudioBuffer,
    rate: TokenRate,
    expected_tokens: Option<usize>,
    cfg: &FeatureConfig,
) -> Result<FeatureTrack> {
    let token_hop = rate.token_hop();
    let mut tokens = rate.tokens_in(audio.duration());
    if let Some(exp) = expected_tokens {
        if exp.abs_diff(tokens) > 1 {
            return Err(Error::Alignment(format!(
                "audio spans {tokens} token frames, motion has {exp}"
            )));
        }
        tokens = exp;
    }
    let hop = cfg.beat.hop;
    let m = mfcc(audio, cfg.n_mfcc, hop)?;
    let md = delta(&m);
    let env = onset_envelope(audio, &cfg.beat)?;
    let beats = detect_beats(&env, &cfg.beat)?;
    let win = ((cfg.tempogram_window / hop).round() as usize).max(2);
    let tg = tempogram(&env, win)?;
    let bands = cfg.tempogram_bands.clamp(1, win);
    let tg_bands = DMatrix::from_fn(tg.nrows(), bands, |r, b| {
        let lo = b * win / bands;
        let hi = ((b + 1) * win / bands).max(lo + 1);
        tg.row(r).columns(lo, hi - lo).mean()
    });
    let onset = DMatrix::from_column_slice(env.len(), 1, &env);

    let frames = tokens + 1;
    let mut groups = vec![
        (FeatureGroup::Mfcc, pool(&m, hop, token_hop, frames)),
        (FeatureGroup::MfccDelta, pool(&md, hop, token_hop, frames)),
    ];
    if cfg.chroma {
        groups.push((
            FeatureGroup::Chroma,
            pool(&chroma(audio, hop)?, hop, token_hop, frames),
        ));
    }
    groups.push((FeatureGroup::Onset, pool(&onset, hop, token_hop, frames)));
    groups.push((
        FeatureGroup::Tempogram,
        pool(&tg_bands, hop, token_hop, frames),
    ));
    let duration = frames as f64 * token_hop;
    let track = FeatureTrack {
        token_hop,
        groups,
        beats: beats.into_iter().filter(|&b| b <= duration).collect(),
    };
    track.validate()?;
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATE: TokenRate = TokenRate {
        fps: 60.0,
        downsample: 8,
    };

    #[test]
    fn four_seconds_gives_31_frames() {
        let a = AudioBuffer::new(vec![0.0; 4 * 16000], 16000).unwrap();
        let t = build_feature_stack(&a, RATE, None, &FeatureConfig::default()).unwrap();
        assert_eq!(t.frame_count(), 31);
        assert!(t.group(FeatureGroup::Chroma).is_none());
        // Pooled silence is constant.
        let s = t.stacked();
        for r in 1..s.nrows() {
            assert!((s.row(r) - s.row(0)).abs().max() < 1e-9);
        }
    }

    #[test]
    fn chroma_group_when_enabled() {
        let a = AudioBuffer::new(vec![0.0; 2 * 16000], 16000).unwrap();
        let cfg = FeatureConfig {
            chroma: true,
            ..FeatureConfig::default()
        };
        let t = build_feature_stack(&a, RATE, None, &cfg).unwrap();
        assert_eq!(t.group(FeatureGroup::Chroma).unwrap().ncols(), 12);
        t.validate().unwrap();
    }

    #[test]
    fn duration_mismatch() {
        let a = AudioBuffer::new(vec![0.0; 4 * 16000], 16000).unwrap();
        let cfg = FeatureConfig::default();
        assert!(build_feature_stack(&a, RATE, Some(31), &cfg).is_ok());
        assert!(matches!(
            build_feature_stack(&a, RATE, Some(33), &cfg),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let track = FeatureTrack {
            token_hop: 8.0 / 60.0,
            groups: vec![(FeatureGroup::Onset, DMatrix::from_element(4, 2, 0.5))],
            beats: vec![0.1, 0.25],
        };
        let stem = dir.path().join("x");
        track.save(&stem).unwrap();
        let back = FeatureTrack::load(&stem, track.token_hop).unwrap();
        assert_eq!(back.stacked(), track.stacked());
        assert_eq!(back.beats, track.beats);
    }
}
