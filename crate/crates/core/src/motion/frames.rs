//! Flat per-frame feature matrices and their binary serialization.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::clip::MotionClip;
use super::rotation::RotationParam;
use super::skeleton::{BodyPart, Skeleton};
use crate::{Error, Result};

/// Column layout: optional root xyz, then one rotation block per listed
/// joint, joints ascending in skeleton order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameLayout {
    pub param: RotationParam,
    pub has_root: bool,
    pub joints: Vec<usize>,
}

impl FrameLayout {
    pub fn width(&self) -> usize {
        self.root_width() + self.joints.len() * self.param.block_len()
    }

    fn root_width(&self) -> usize {
        if self.has_root {
            3
        } else {
            0
        }
    }

    /// First column of the `pos`-th joint block.
    pub fn block_start(&self, pos: usize) -> usize {
        self.root_width() + pos * self.param.block_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub fps: f64,
    pub layout: FrameLayout,
    /// K rows by D columns.
    pub values: DMatrix<f64>,
}

impl FrameMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `[start, end)`.
    pub fn row_range(&self, start: usize, end: usize) -> FrameMatrix {
        FrameMatrix {
            fps: self.fps,
            layout: self.layout.clone(),
            values: self.values.rows(start, end - start).into_owned(),
        }
    }
}

pub fn to_frame_matrix(clip: &MotionClip) -> FrameMatrix {
    let joints = clip.joint_count();
    let layout = FrameLayout {
        param: clip.param,
        has_root: true,
        joints: (0..joints).collect(),
    };
    let d = layout.width();
    let k = clip.frame_count();
    let values = DMatrix::from_fn(k, d, |r, c| {
        if c < 3 {
            clip.root_translations[r][c]
        } else {
            clip.rotations[r][c - 3]
        }
    });
    FrameMatrix {
        fps: clip.fps,
        layout,
        values,
    }
}

/// Inverse of [`to_frame_matrix`]; requires the full-skeleton layout.
pub fn from_frame_matrix(m: &FrameMatrix) -> Result<MotionClip> {
    let full = m.layout.has_root && m.layout.joints.iter().enumerate().all(|(i, &j)| i == j);
    if !full {
        return Err(Error::InvalidPartition(
            "frame matrix does not cover the whole skeleton".into(),
        ));
    }
    let k = m.rows();
    let d = m.cols();
    Ok(MotionClip {
        fps: m.fps,
        param: m.layout.param,
        root_translations: (0..k)
            .map(|r| [m.values[(r, 0)], m.values[(r, 1)], m.values[(r, 2)]])
            .collect(),
        rotations: (0..k)
            .map(|r| (3..d).map(|c| m.values[(r, c)]).collect())
            .collect(),
    })
}

/// Column-disjoint body/hand split. Root columns go with the body.
pub fn split_parts(m: &FrameMatrix, skel: &Skeleton) -> Result<(FrameMatrix, FrameMatrix)> {
    if skel.parts.len() != skel.joint_count() {
        return Err(Error::InvalidPartition(format!(
            "{} part tags for {} joints",
            skel.parts.len(),
            skel.joint_count()
        )));
    }
    if !m.layout.has_root {
        return Err(Error::InvalidPartition("input lacks root columns".into()));
    }
    if let Some(&bad) = m.layout.joints.iter().find(|&&j| j >= skel.joint_count()) {
        return Err(Error::InvalidPartition(format!(
            "joint {bad} is outside the skeleton"
        )));
    }
    let pick = |part: BodyPart| -> FrameMatrix {
        let positions: Vec<usize> = (0..m.layout.joints.len())
            .filter(|&p| skel.parts[m.layout.joints[p]] == part)
            .collect();
        let layout = FrameLayout {
            param: m.layout.param,
            has_root: part == BodyPart::Body,
            joints: positions.iter().map(|&p| m.layout.joints[p]).collect(),
        };
        let mut cols: Vec<usize> = Vec::with_capacity(layout.width());
        if layout.has_root {
            cols.extend(0..3);
        }
        let b = m.layout.param.block_len();
        for &p in &positions {
            let s = m.layout.block_start(p);
            cols.extend(s..s + b);
        }
        let values = DMatrix::from_fn(m.rows(), cols.len(), |r, c| m.values[(r, cols[c])]);
        FrameMatrix {
            fps: m.fps,
            layout,
            values,
        }
    };
    Ok((pick(BodyPart::Body), pick(BodyPart::Hand)))
}

/// Column-wise inverse of [`split_parts`].
pub fn join_parts(body: &FrameMatrix, hand: &FrameMatrix) -> Result<FrameMatrix> {
    if body.rows() != hand.rows() {
        return Err(Error::DimensionMismatch {
            expected: body.rows(),
            got: hand.rows(),
        });
    }
    if body.layout.param != hand.layout.param || !body.layout.has_root || hand.layout.has_root {
        return Err(Error::InvalidPartition("incompatible part layouts".into()));
    }
    let b = body.layout.param.block_len();
    // (joint, source, block start)
    let mut blocks: Vec<(usize, &FrameMatrix, usize)> = Vec::new();
    for (p, &j) in body.layout.joints.iter().enumerate() {
        blocks.push((j, body, body.layout.block_start(p)));
    }
    for (p, &j) in hand.layout.joints.iter().enumerate() {
        blocks.push((j, hand, hand.layout.block_start(p)));
    }
    blocks.sort_by_key(|&(j, _, _)| j);
    let layout = FrameLayout {
        param: body.layout.param,
        has_root: true,
        joints: blocks.iter().map(|&(j, _, _)| j).collect(),
    };
    let mut values = DMatrix::zeros(body.rows(), layout.width());
    values
        .columns_mut(0, 3)
        .copy_from(&body.values.columns(0, 3));
    for (p, &(_, src, start)) in blocks.iter().enumerate() {
        let dst = layout.block_start(p);
        values
            .columns_mut(dst, b)
            .copy_from(&src.values.columns(start, b));
    }
    Ok(FrameMatrix {
        fps: body.fps,
        layout,
        values,
    })
}

/// Velocity and acceleration, both scaled to per-second units. Interior rows
/// use central differences; the first and last rows use one-sided ones.
pub fn derivatives(m: &FrameMatrix) -> Result<(FrameMatrix, FrameMatrix)> {
    let (vel, acc) = derivative_values(&m.values, m.fps)?;
    let wrap = |values| FrameMatrix {
        fps: m.fps,
        layout: m.layout.clone(),
        values,
    };
    Ok((wrap(vel), wrap(acc)))
}

pub(crate) fn derivative_values(
    x: &DMatrix<f64>,
    fps: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = x.nrows();
    if k < 3 {
        return Err(Error::TooShort { needed: 3, got: k });
    }
    let mut vel = DMatrix::zeros(k, x.ncols());
    let mut acc = DMatrix::zeros(k, x.ncols());
    for c in 0..x.ncols() {
        for r in 0..k {
            vel[(r, c)] = if r == 0 {
                (x[(1, c)] - x[(0, c)]) * fps
            } else if r == k - 1 {
                (x[(k - 1, c)] - x[(k - 2, c)]) * fps
            } else {
                (x[(r + 1, c)] - x[(r - 1, c)]) * 0.5 * fps
            };
            let mid = r.clamp(1, k - 2);
            acc[(r, c)] = (x[(mid + 1, c)] - 2.0 * x[(mid, c)] + x[(mid - 1, c)]) * fps * fps;
        }
    }
    Ok((vel, acc))
}

/// Little-endian `u32 rows, u32 cols`, then row-major `f32` values.
pub fn write_matrix_bin<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::OutOfRange("row count".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::OutOfRange("column count".into()))?;
    w.write_u32::<LittleEndian>(rows)?;
    w.write_u32::<LittleEndian>(cols)?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_f32::<LittleEndian>(m[(r, c)] as f32)?;
        }
    }
    Ok(())
}

pub fn read_matrix_bin<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = r.read_f32::<LittleEndian>()? as f64;
        }
    }
    Ok(m)
}
