//! Rotation parameterizations used by the frame matrices.
//!
//! Two encodings are supported: the exponential map (axis times angle, three
//! values) and the continuous six-value form (first two columns of the
//! rotation matrix, recovered by Gram–Schmidt).

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationParam {
    #[serde(rename = "expmap-3")]
    ExpMap3,
    #[serde(rename = "cont-6")]
    Cont6,
}

impl RotationParam {
    pub fn block_len(self) -> usize {
        match self {
            RotationParam::ExpMap3 => 3,
            RotationParam::Cont6 => 6,
        }
    }

    pub fn identity_block(self) -> Vec<f64> {
        match self {
            RotationParam::ExpMap3 => vec![0.0; 3],
            RotationParam::Cont6 => vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn encode(self, r: &Matrix3<f64>) -> Vec<f64> {
        match self {
            RotationParam::ExpMap3 => {
                let v = expmap_from_matrix(r);
                vec![v.x, v.y, v.z]
            }
            RotationParam::Cont6 => vec![
                r[(0, 0)],
                r[(1, 0)],
                r[(2, 0)],
                r[(0, 1)],
                r[(1, 1)],
                r[(2, 1)],
            ],
        }
    }

    pub fn decode(self, block: &[f64]) -> Matrix3<f64> {
        match self {
            RotationParam::ExpMap3 => {
                Rotation3::from_scaled_axis(Vector3::new(block[0], block[1], block[2])).into_inner()
            }
            RotationParam::Cont6 => gram_schmidt(block),
        }
    }
}

impl std::str::FromStr for RotationParam {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "expmap-3" | "expmap" => Ok(RotationParam::ExpMap3),
            "cont-6" | "cont6" => Ok(RotationParam::Cont6),
            other => Err(crate::Error::Config(format!(
                "unknown rotation parameterization {other:?}"
            ))),
        }
    }
}

/// Axis-angle vector with angle in `[0, π]`.
pub fn expmap_from_matrix(r: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix(r).scaled_axis()
}

/// Rebuild an orthonormal frame from the two stored columns.
pub fn gram_schmidt(block: &[f64]) -> Matrix3<f64> {
    let a = Vector3::new(block[0], block[1], block[2]);
    let b = Vector3::new(block[3], block[4], block[5]);
    let c0 = a.normalize();
    let c1 = (b - c0 * c0.dot(&b)).normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Canonical form of a block: expmap angle folded into `[0, π]`, cont-6
/// columns orthonormalized.
pub fn canonicalize(param: RotationParam, block: &[f64]) -> Vec<f64> {
    param.encode(&param.decode(block))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn unit(self) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        v[self.index()] = 1.0;
        v
    }
}

/// Intrinsic Euler order as listed in BVH channel declarations: the local
/// rotation is `R(a0) * R(a1) * R(a2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EulerOrder(pub [Axis; 3]);

impl EulerOrder {
    pub const ZXY: EulerOrder = EulerOrder([Axis::Z, Axis::X, Axis::Y]);

    pub fn is_valid(&self) -> bool {
        let [a, b, c] = self.0;
        a != b && b != c && a != c
    }

    /// Rotation matrix from angles in degrees, one per listed axis.
    pub fn to_matrix(&self, degrees: [f64; 3]) -> Matrix3<f64> {
        let mut r = Matrix3::identity();
        for (axis, deg) in self.0.iter().zip(degrees) {
            r *= Rotation3::from_axis_angle(
                &nalgebra::Unit::new_unchecked(axis.unit()),
                deg.to_radians(),
            )
            .into_inner();
        }
        r
    }

    /// Inverse of [`EulerOrder::to_matrix`]; middle angle in `[-90, 90]`.
    pub fn from_matrix(&self, r: &Matrix3<f64>) -> [f64; 3] {
        let [a, b, c] = self.0.map(Axis::index);
        // +1 for cyclic orders (xyz, yzx, zxy).
        let s = if (b + 3 - a) % 3 == 1 { 1.0 } else { -1.0 };
        let sb = (s * r[(a, c)]).clamp(-1.0, 1.0);
        let beta = sb.asin();
        let (alpha, gamma);
        if sb.abs() < 1.0 - 1e-12 {
            alpha = (-s * r[(b, c)]).atan2(r[(c, c)]);
            gamma = (-s * r[(a, b)]).atan2(r[(a, a)]);
        } else {
            // Gimbal lock: fold everything into the first angle.
            gamma = 0.0;
            alpha = (s * r[(c, b)]).atan2(r[(b, b)]);
        }
        [alpha.to_degrees(), beta.to_degrees(), gamma.to_degrees()]
    }
}
