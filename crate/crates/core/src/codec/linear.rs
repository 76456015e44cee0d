//! Windowed linear encoder/decoder.
//!
//! Motion is cut into non-overlapping windows of `d` frames, each flattened
//! frame by frame into a `d * D` vector. The encoder projects a centered
//! window onto the top `C` principal directions; the decoder is the
//! transpose followed by re-centering, which is the least-squares inverse
//! on the training windows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::motion::FrameMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCodec {
    pub downsample: usize,
    pub frame_dim: usize,
    pub latent_dim: usize,
    /// Mean training window, `d * D`.
    pub mean: DVector<f64>,
    /// `C x (d * D)`, orthonormal rows.
    pub encoder: DMatrix<f64>,
    /// Every singular value of the centered training windows, descending.
    pub singular_values: Vec<f64>,
    pub training_windows: usize,
}

impl LinearCodec {
    pub fn window_dim(&self) -> usize {
        self.downsample * self.frame_dim
    }

    /// Squared Frobenius error of reconstructing the training windows:
    /// the energy of the discarded singular values.
    pub fn truncation_energy(&self) -> f64 {
        self.singular_values
            .iter()
            .skip(self.latent_dim)
            .map(|s| s * s)
            .sum()
    }

    pub fn encode_window(&self, window: &DVector<f64>) -> DVector<f64> {
        &self.encoder * (window - &self.mean)
    }

    pub fn decode_window(&self, latent: &DVector<f64>) -> DVector<f64> {
        self.encoder.tr_mul(latent) + &self.mean
    }
}

/// Flattened non-overlapping `d`-frame windows, one per row. A trailing
/// partial window is dropped.
pub fn window_matrix(clips: &[FrameMatrix], d: usize) -> Result<DMatrix<f64>> {
    let dim = clips.first().map_or(0, |c| c.cols());
    let count: usize = clips.iter().map(|c| c.rows() / d).sum();
    let mut out = DMatrix::zeros(count, d * dim);
    let mut row = 0;
    for clip in clips {
        if clip.cols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: clip.cols(),
            });
        }
        for w in 0..clip.rows() / d {
            for f in 0..d {
                for c in 0..dim {
                    out[(row, f * dim + c)] = clip.values[(w * d + f, c)];
                }
            }
            row += 1;
        }
    }
    Ok(out)
}

pub fn fit_linear_codec(clips: &[FrameMatrix], d: usize, latent_dim: usize) -> Result<LinearCodec> {
    if d == 0 || latent_dim == 0 {
        return Err(Error::Config(
            "downsample rate and latent dimension must be positive".into(),
        ));
    }
    let x = window_matrix(clips, d)?;
    let (n, p) = x.shape();
    if n < latent_dim {
        return Err(Error::Config(format!(
            "{n} training windows cannot support latent dimension {latent_dim}"
        )));
    }
    if latent_dim > p {
        return Err(Error::Config(format!(
            "latent dimension {latent_dim} exceeds window dimension {p}"
        )));
    }
    let mean = DVector::from_fn(p, |c, _| x.column(c).mean());
    let mut xc = x;
    for mut r in xc.row_iter_mut() {
        r -= mean.transpose();
    }
    let svd = xc.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Invalid("SVD did not produce right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let top = sv.first().copied().unwrap_or(0.0);
    let tol = top * (n.max(p) as f64) * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < latent_dim {
        return Err(Error::RankDeficient {
            rank,
            requested: latent_dim,
        });
    }
    let mut encoder = DMatrix::zeros(latent_dim, p);
    for (r, &i) in order.iter().take(latent_dim).enumerate() {
        encoder.row_mut(r).copy_from(&v_t.row(i));
    }
    Ok(LinearCodec {
        downsample: d,
        frame_dim: p / d,
        latent_dim,
        mean,
        encoder,
        singular_values: sv,
        training_windows: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{FrameLayout, RotationParam};
    use rand::{Rng, SeedableRng};

    pub(crate) fn frames(values: DMatrix<f64>) -> FrameMatrix {
        FrameMatrix {
            fps: 60.0,
            layout: FrameLayout {
                param: RotationParam::ExpMap3,
                has_root: true,
                joints: vec![],
            },
            values,
        }
    }

    #[test]
    fn subspace_windows_reconstruct_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (d, dim, c) = (2, 3, 2);
        let basis = DMatrix::from_fn(c, d * dim, |_, _| rng.random_range(-1.0..1.0));
        let coeffs = DMatrix::from_fn(40, c, |_, _| rng.random_range(-1.0..1.0));
        let windows = coeffs * &basis;
        // Unflatten into a 80-frame clip.
        let clip = DMatrix::from_fn(80, dim, |r, col| windows[(r / d, (r % d) * dim + col)]);
        let codec = fit_linear_codec(&[frames(clip.clone())], d, c).unwrap();
        let x = window_matrix(&[frames(clip)], d).unwrap();
        for r in 0..x.nrows() {
            let w = x.row(r).transpose();
            let back = codec.decode_window(&codec.encode_window(&w));
            assert!((back - w).abs().max() <= 1e-9);
        }
        assert!(codec.truncation_energy() < 1e-18);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let clip = DMatrix::from_fn(20, 2, |r, c| if c == 0 { r as f64 } else { 0.0 });
        match fit_linear_codec(&[frames(clip)], 2, 3) {
            Err(Error::RankDeficient { rank, requested }) => {
                assert_eq!(requested, 3);
                assert!(rank < 3);
            }
            other => panic!("{other:?}"),
        }
    }
}
