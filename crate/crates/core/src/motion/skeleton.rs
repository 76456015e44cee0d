use serde::{Deserialize, Serialize};

use super::rotation::{Axis, EulerOrder};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyPart {
    Body,
    Hand,
}

impl BodyPart {
    pub fn as_str(self) -> &'static str {
        match self {
            BodyPart::Body => "body",
            BodyPart::Hand => "hand",
        }
    }
}

const FINGER_MARKERS: [&str; 7] = [
    "thumb", "index", "middle", "ring", "pinky", "little", "finger",
];

/// Fingers go to the hand part; everything else, wrists included, is body.
pub fn classify_joint(name: &str) -> BodyPart {
    let lower = name.to_ascii_lowercase();
    if FINGER_MARKERS.iter().any(|m| lower.contains(m)) {
        BodyPart::Hand
    } else {
        BodyPart::Body
    }
}

/// Joint hierarchy in topological order (parents precede children).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    pub parents: Vec<i32>,
    pub offsets: Vec<[f64; 3]>,
    pub parts: Vec<BodyPart>,
    /// Euler order of each joint's rotation channels.
    pub rotation_orders: Vec<EulerOrder>,
    /// Order of the root translation channels.
    pub root_position_order: [Axis; 3],
    pub end_sites: Vec<Option<[f64; 3]>>,
}

impl Skeleton {
    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn joints_of(&self, part: BodyPart) -> Vec<usize> {
        (0..self.joint_count())
            .filter(|&j| self.parts[j] == part)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 {
            return Err(Error::Invalid("skeleton has no joints".into()));
        }
        if [
            self.parents.len(),
            self.offsets.len(),
            self.rotation_orders.len(),
            self.end_sites.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(Error::Invalid("skeleton field lengths disagree".into()));
        }
        if self.parts.len() != n {
            return Err(Error::InvalidPartition(format!(
                "{} part tags for {} joints",
                self.parts.len(),
                n
            )));
        }
        let roots = self.parents.iter().filter(|&&p| p < 0).count();
        if roots != 1 || self.parents[0] >= 0 {
            return Err(Error::Invalid(format!(
                "expected exactly one root at index 0, found {roots}"
            )));
        }
        for (j, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return Err(Error::Invalid(format!(
                    "joint {} has parent {p}, not topologically ordered",
                    self.names[j]
                )));
            }
        }
        if self.parts[0] != BodyPart::Body {
            return Err(Error::InvalidPartition("root must belong to body".into()));
        }
        Ok(())
    }

    /// Builder used by fixtures: names plus parent indices, zero offsets,
    /// ZXY rotation channels and name-based part tags.
    pub fn from_parents(names: &[&str], parents: &[i32], offsets: &[[f64; 3]]) -> Result<Self> {
        let skel = Skeleton {
            names: names.iter().map(|s| s.to_string()).collect(),
            parents: parents.to_vec(),
            offsets: offsets.to_vec(),
            parts: names.iter().map(|n| classify_joint(n)).collect(),
            rotation_orders: vec![EulerOrder::ZXY; names.len()],
            root_position_order: [Axis::X, Axis::Y, Axis::Z],
            end_sites: (0..names.len())
                .map(|j| {
                    if parents.iter().any(|&p| p == j as i32) {
                        None
                    } else {
                        Some([0.0, 0.05, 0.0])
                    }
                })
                .collect(),
        };
        skel.validate()?;
        Ok(skel)
    }
}
