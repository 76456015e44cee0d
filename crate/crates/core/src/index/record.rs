use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeSpan {
    pub start: f64,
    pub end: f64,
}

/// One library gesture and its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureRecord {
    /// Digit identifier; empty until an index assigns one.
    #[serde(default)]
    pub identifier: String,
    pub label: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub contextual_meaning: String,
    #[serde(default)]
    pub example_sentences: Vec<String>,
    pub motion_clips: Vec<String>,
    /// Stroke span per motion clip, aligned with `motion_clips`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stroke: Vec<Option<StrokeSpan>>,
}

impl GestureRecord {
    /// Label, description, and contextual meaning, in that order.
    pub fn meta_text(&self) -> String {
        [&self.label, &self.description, &self.contextual_meaning]
            .iter()
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim())
            .collect::<Vec<_>>()
            .join(". ")
    }

    pub fn stroke_for(&self, clip: usize) -> Option<StrokeSpan> {
        self.stroke.get(clip).copied().flatten()
    }
}

pub fn validate_library(records: &[GestureRecord]) -> Result<()> {
    let mut labels = HashSet::new();
    for r in records {
        if r.label.trim().is_empty() {
            return Err(Error::Config("record with an empty label".into()));
        }
        if !labels.insert(r.label.trim().to_uppercase()) {
            return Err(Error::Config(format!("duplicate label {:?}", r.label)));
        }
        if r.motion_clips.is_empty() {
            return Err(Error::Config(format!("{} has no motion clips", r.label)));
        }
        if r.stroke.len() > r.motion_clips.len() {
            return Err(Error::Config(format!(
                "{} has more stroke spans than clips",
                r.label
            )));
        }
        for s in r.stroke.iter().flatten() {
            if !(s.start >= 0.0 && s.end > s.start) {
                return Err(Error::Config(format!("{} has an empty stroke span", r.label)));
            }
        }
    }
    Ok(())
}

pub fn load_library(path: &Path) -> Result<Vec<GestureRecord>> {
    let records: Vec<GestureRecord> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    validate_library(&records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_keys_are_snake_case() {
        let text = r#"[{"identifier":"","label":"WAVE","description":"hand waves",
            "contextual_meaning":"greeting","example_sentences":["hi there"],
            "motion_clips":["wave.bvh"],"stroke":[{"start":0.5,"end":1.5}]}]"#;
        let recs: Vec<GestureRecord> = serde_json::from_str(text).unwrap();
        validate_library(&recs).unwrap();
        assert_eq!(recs[0].stroke_for(0).unwrap().end, 1.5);
        assert_eq!(recs[0].meta_text(), "WAVE. hand waves. greeting");
    }

    #[test]
    fn duplicate_labels_rejected() {
        let r = GestureRecord {
            identifier: String::new(),
            label: "WAVE".into(),
            description: String::new(),
            contextual_meaning: String::new(),
            example_sentences: vec![],
            motion_clips: vec!["a.bvh".into()],
            stroke: vec![],
        };
        assert!(validate_library(&[r.clone(), r]).is_err());
    }
}
