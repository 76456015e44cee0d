//! Gesture library, text embeddings, and semantic identifiers.

mod cluster;
mod embed;
mod ids;
mod record;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cluster::{constrained_assign, constrained_kmeans, ConstrainedResult};
pub use embed::{cosine, tokenize, EmbeddingProvider, LexicalEmbedder, ServiceConfig, ServiceEmbedder};
pub use ids::{build_hierarchical_ids, IdConfig, IdNode};
pub use record::{load_library, validate_library, GestureRecord, StrokeSpan};

use crate::codec::GestureCodec;
use crate::motion::MotionClip;
use crate::net::content_hash;
use crate::{Error, Result};

/// Embedded library with hierarchical identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticIndex {
    /// Records with `identifier` filled in.
    pub records: Vec<GestureRecord>,
    pub tree: IdNode,
    pub config: IdConfig,
    /// Provider family the vectors came from.
    pub family: String,
    /// Present when the index was built with the built-in embedder.
    pub embedder: Option<LexicalEmbedder>,
    /// Embedding of each record's label, description, and meaning.
    pub record_vectors: Vec<Vec<f64>>,
    /// Embeddings of each record's example sentences.
    pub sentence_vectors: Vec<Vec<Vec<f64>>>,
    pub embedding_fingerprint: String,
}

fn fingerprint_vectors(vs: &[Vec<f64>]) -> String {
    let text: Vec<String> = vs.iter().map(|v| format!("{v:?}")).collect();
    let refs: Vec<&str> = text.iter().map(String::as_str).collect();
    content_hash(&refs)[..16].to_string()
}

/// Text the built-in embedder is fitted on: every metadata block and example.
pub fn library_corpus(records: &[GestureRecord]) -> Vec<String> {
    let mut corpus = Vec::new();
    for r in records {
        corpus.push(r.meta_text());
        corpus.extend(r.example_sentences.iter().cloned());
    }
    corpus
}

impl SemanticIndex {
    pub fn build(records: &[GestureRecord], provider: &dyn EmbeddingProvider, cfg: &IdConfig) -> Result<Self> {
        validate_library(records)?;
        let metas: Vec<String> = records.iter().map(GestureRecord::meta_text).collect();
        let record_vectors = provider.embed(&metas)?;
        let mut sentence_vectors = Vec::with_capacity(records.len());
        for r in records {
            sentence_vectors.push(if r.example_sentences.is_empty() {
                Vec::new()
            } else {
                provider.embed(&r.example_sentences)?
            });
        }
        let labels: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
        let (ids, tree) = build_hierarchical_ids(&record_vectors, &labels, cfg)?;
        let mut records = records.to_vec();
        for (r, id) in records.iter_mut().zip(ids) {
            r.identifier = id;
        }
        Ok(SemanticIndex {
            records,
            tree,
            config: *cfg,
            family: provider.family(),
            embedder: None,
            embedding_fingerprint: fingerprint_vectors(&record_vectors),
            record_vectors,
            sentence_vectors,
        })
    }

    /// Build with a lexical embedder fitted on the library itself.
    pub fn build_lexical(records: &[GestureRecord], dim: usize, cfg: &IdConfig) -> Result<Self> {
        let emb = LexicalEmbedder::fit(&library_corpus(records), dim)?;
        let mut index = SemanticIndex::build(records, &emb, cfg)?;
        index.embedder = Some(emb);
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        let key = key.trim();
        self.records
            .iter()
            .position(|r| r.identifier == key)
            .or_else(|| self.records.iter().position(|r| r.label.eq_ignore_ascii_case(key)))
    }

    pub fn lookup(&self, key: &str) -> Result<&GestureRecord> {
        match self.position(key) {
            Some(i) => Ok(&self.records[i]),
            None => {
                let upper = key.trim().to_uppercase();
                let mut scored: Vec<(usize, &str)> = self
                    .records
                    .iter()
                    .map(|r| (strsim::levenshtein(&upper, &r.label.to_uppercase()), r.label.as_str()))
                    .collect();
                scored.sort();
                Err(Error::NotFound {
                    key: key.to_string(),
                    suggestions: scored.iter().take(3).map(|(_, l)| l.to_string()).collect(),
                })
            }
        }
    }

    /// Record index whose identifier and label both match.
    pub fn position_of_pair(&self, identifier: &str, label: &str) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.identifier == identifier && r.label.eq_ignore_ascii_case(label.trim()))
    }

    pub fn validate(&self) -> Result<()> {
        validate_library(&self.records)?;
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.identifier.is_empty() || !r.identifier.bytes().all(|b| b.is_ascii_digit()) {
                return Err(Error::Invalid(format!("{} has identifier {:?}", r.label, r.identifier)));
            }
            if !seen.insert(r.identifier.as_str()) {
                return Err(Error::Invalid(format!("identifier {} is not unique", r.identifier)));
            }
        }
        let mut members = self.tree.members();
        members.sort_unstable();
        if members != (0..self.records.len()).collect::<Vec<_>>() {
            return Err(Error::Invalid("identifier tree does not cover the records".into()));
        }
        if self.record_vectors.len() != self.records.len() || self.sentence_vectors.len() != self.records.len() {
            return Err(Error::Invalid("embedding tables do not match the records".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let index: SemanticIndex = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        index.validate()?;
        Ok(index)
    }

    /// `identifier LABEL` lines in identifier order.
    pub fn catalog(&self) -> Vec<String> {
        let mut lines: Vec<(&str, &str)> = self
            .records
            .iter()
            .map(|r| (r.identifier.as_str(), r.label.as_str()))
            .collect();
        lines.sort();
        lines.into_iter().map(|(i, l)| format!("{i} {l}")).collect()
    }

    pub fn by_identifier(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.identifier.as_str(), i))
            .collect()
    }
}

/// Mean pre-quantization latent over token frames, body then hand.
pub fn temporal_mean_latent(clip: &MotionClip, codec: &GestureCodec) -> Result<Vec<f64>> {
    let (body, hand) = codec.latents(clip)?;
    let mut v = body.temporal_mean();
    if let Some(h) = hand {
        v.extend(h.temporal_mean());
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateMatch {
    pub index: usize,
    pub distance: f64,
}

/// Candidates whose mean latent lies closer than `threshold` to the
/// anchor's; exact duplicates (distance 0) always pass. Sorted ascending.
pub fn match_candidates(
    anchor: &MotionClip,
    candidates: &[MotionClip],
    threshold: f64,
    codec: &GestureCodec,
) -> Result<Vec<CandidateMatch>> {
    let a = temporal_mean_latent(anchor, codec)?;
    let mut out = Vec::new();
    for (index, c) in candidates.iter().enumerate() {
        let v = temporal_mean_latent(c, codec)?;
        let distance = a.iter().zip(&v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        if distance < threshold || distance == 0.0 {
            out.push(CandidateMatch { index, distance });
        }
    }
    out.sort_by(|x, y| x.distance.total_cmp(&y.distance).then(x.index.cmp(&y.index)));
    Ok(out)
}
