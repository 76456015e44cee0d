use serde::{Deserialize, Serialize};

use super::rotation::{gram_schmidt, RotationParam};
use super::skeleton::Skeleton;
use crate::{Error, Result};

/// Root translation and per-joint rotations sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub fps: f64,
    pub param: RotationParam,
    /// One row per frame, meters.
    pub root_translations: Vec<[f64; 3]>,
    /// One row per frame, `J * param.block_len()` values in skeleton order.
    pub rotations: Vec<Vec<f64>>,
}

impl MotionClip {
    pub fn frame_count(&self) -> usize {
        self.root_translations.len()
    }

    pub fn duration(&self) -> f64 {
        self.frame_count() as f64 / self.fps
    }

    pub fn joint_count(&self) -> usize {
        self.rotations
            .first()
            .map_or(0, |r| r.len() / self.param.block_len())
    }

    /// A clip holding the identity rotation everywhere.
    pub fn rest(joints: usize, frames: usize, fps: f64, param: RotationParam) -> Self {
        let row: Vec<f64> = (0..joints).flat_map(|_| param.identity_block()).collect();
        MotionClip {
            fps,
            param,
            root_translations: vec![[0.0; 3]; frames],
            rotations: vec![row; frames],
        }
    }

    pub fn rotation_block(&self, frame: usize, joint: usize) -> &[f64] {
        let b = self.param.block_len();
        &self.rotations[frame][joint * b..(joint + 1) * b]
    }

    pub fn validate(&self, skel: &Skeleton) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Invalid(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if self.rotations.len() != self.root_translations.len() {
            return Err(Error::Invalid(
                "rotation and translation frame counts differ".into(),
            ));
        }
        let width = skel.joint_count() * self.param.block_len();
        for (k, row) in self.rotations.iter().enumerate() {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: row.len(),
                });
            }
            if row
                .iter()
                .chain(self.root_translations[k].iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::Invalid(format!("non-finite value in frame {k}")));
            }
        }
        for k in 0..self.frame_count() {
            for j in 0..skel.joint_count() {
                let block = self.rotation_block(k, j);
                match self.param {
                    RotationParam::ExpMap3 => {
                        let angle = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if angle > std::f64::consts::PI + 1e-9 {
                            return Err(Error::Invalid(format!(
                                "expmap angle {angle} exceeds pi at frame {k}, joint {j}"
                            )));
                        }
                    }
                    RotationParam::Cont6 => {
                        let r = gram_schmidt(block);
                        let err = (r.transpose() * r - nalgebra::Matrix3::identity())
                            .abs()
                            .max();
                        if !(err <= 1e-6) {
                            return Err(Error::Invalid(format!(
                                "degenerate cont-6 block at frame {k}, joint {j}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Re-encode every rotation in another parameterization.
    pub fn with_param(&self, param: RotationParam) -> MotionClip {
        if param == self.param {
            return self.clone();
        }
        let joints = self.joint_count();
        let rotations = (0..self.frame_count())
            .map(|k| {
                (0..joints)
                    .flat_map(|j| param.encode(&self.param.decode(self.rotation_block(k, j))))
                    .collect()
            })
            .collect();
        MotionClip {
            fps: self.fps,
            param,
            root_translations: self.root_translations.clone(),
            rotations,
        }
    }

    /// Frames `[start, end)`, clamped to the clip.
    pub fn slice(&self, start: usize, end: usize) -> MotionClip {
        let end = end.min(self.frame_count());
        let start = start.min(end);
        MotionClip {
            fps: self.fps,
            param: self.param,
            root_translations: self.root_translations[start..end].to_vec(),
            rotations: self.rotations[start..end].to_vec(),
        }
    }
}
