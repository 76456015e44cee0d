//! Reconstruction and quantization loss terms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::motion::derivative_values;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub position: f64,
    /// Applied to both the velocity and the acceleration term.
    pub derivative: f64,
    pub commitment: f64,
    pub codebook: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            position: 1.0,
            derivative: 1.0,
            commitment: 0.02,
            codebook: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub commitment: f64,
    pub codebook: f64,
    pub total: f64,
}

fn mean_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64
}

/// L1 terms are per-entry means; the two latent terms are mean squared
/// norms per token frame. Without gradients the commitment and codebook
/// terms coincide numerically; both are reported.
pub fn rvq_loss(
    motion: &DMatrix<f64>,
    recon: &DMatrix<f64>,
    fps: f64,
    latents: &DMatrix<f64>,
    quantized: &DMatrix<f64>,
    w: &LossWeights,
) -> Result<LossTerms> {
    if motion.shape() != recon.shape() {
        return Err(Error::DimensionMismatch {
            expected: motion.len(),
            got: recon.len(),
        });
    }
    if latents.shape() != quantized.shape() {
        return Err(Error::DimensionMismatch {
            expected: latents.len(),
            got: quantized.len(),
        });
    }
    let (va, aa) = derivative_values(motion, fps)?;
    let (vb, ab) = derivative_values(recon, fps)?;
    let position = mean_abs_diff(motion, recon);
    let velocity = mean_abs_diff(&va, &vb);
    let acceleration = mean_abs_diff(&aa, &ab);
    let sq = if latents.nrows() == 0 {
        0.0
    } else {
        (latents - quantized).norm_squared() / latents.nrows() as f64
    };
    let total = w.position * position
        + w.derivative * (velocity + acceleration)
        + w.commitment * sq
        + w.codebook * sq;
    Ok(LossTerms {
        position,
        velocity,
        acceleration,
        commitment: sq,
        codebook: sq,
        total,
    })
}
