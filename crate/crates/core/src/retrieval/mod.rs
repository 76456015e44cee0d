//! Transcript-driven gesture retrieval.

mod chat;
mod tags;
mod transcript;

use serde::{Deserialize, Serialize};

pub use chat::{
    build_instruction_dataset, render_instruction, retrieve_llm, retrieve_llm_many, write_jsonl, ChatClient, InstructionRecord,
    LlmClientConfig, DEFAULT_INSTRUCTION,
};
pub use tags::{
    check_pair, parse_annotated_text, render_annotated, validate_annotations, Annotation, Hallucination, Source,
    Tag, ValidationReport,
};
pub use transcript::{trigger_midpoint, TimedTranscript, TimedWord};

use crate::index::{cosine, EmbeddingProvider, SemanticIndex};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub annotations: Vec<Annotation>,
    /// Trigger midpoint per annotation, seconds.
    pub midpoints: Vec<f64>,
    /// Validation of everything the retriever proposed, before dropping.
    pub report: ValidationReport,
    /// Transport retries spent.
    pub retries: u32,
}

impl RetrievalResult {
    pub(crate) fn from_valid(
        transcript: &TimedTranscript,
        annotations: Vec<Annotation>,
        report: ValidationReport,
        retries: u32,
    ) -> Result<Self> {
        let midpoints = annotations
            .iter()
            .map(|a| trigger_midpoint(transcript, a.word))
            .collect::<Result<Vec<_>>>()?;
        Ok(RetrievalResult {
            annotations,
            midpoints,
            report,
            retries,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Context words on each side of the candidate word.
    pub window: usize,
    pub threshold: f64,
    pub per_sentence_cap: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            window: 4,
            threshold: 0.35,
            per_sentence_cap: 2,
        }
    }
}

/// Best record and its score for one text vector: the maximum cosine over
/// the record's metadata and example-sentence embeddings.
fn best_record(v: &[f64], index: &SemanticIndex) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (r, meta) in index.record_vectors.iter().enumerate() {
        let s = index.sentence_vectors[r]
            .iter()
            .map(|e| cosine(v, e))
            .fold(cosine(v, meta), f64::max);
        if s > best.1 {
            best = (r, s);
        }
    }
    best
}

/// Embedding-similarity retrieval over sliding word windows.
pub fn retrieve_baseline(
    transcript: &TimedTranscript,
    index: &SemanticIndex,
    provider: &dyn EmbeddingProvider,
    cfg: &BaselineConfig,
) -> Result<RetrievalResult> {
    transcript.validate()?;
    if provider.family() != index.family {
        return Err(Error::Config(format!(
            "index was embedded with {}, retriever uses {}",
            index.family,
            provider.family()
        )));
    }
    let n = transcript.len();
    if n == 0 || index.is_empty() {
        return RetrievalResult::from_valid(transcript, Vec::new(), ValidationReport::default(), 0);
    }
    let spans = transcript.sentence_spans();
    let mut sentence = vec![0usize; n];
    for (s, &(a, b)) in spans.iter().enumerate() {
        sentence[a..b].iter_mut().for_each(|x| *x = s);
    }
    let windows: Vec<String> = (0..n)
        .map(|i| {
            let (s, e) = spans[sentence[i]];
            let lo = i.saturating_sub(cfg.window).max(s);
            let hi = (i + cfg.window + 1).min(e);
            transcript.words[lo..hi]
                .iter()
                .map(|w| w.w.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let vectors = provider.embed(&windows)?;
    let scored: Vec<(usize, f64)> = vectors.iter().map(|v| best_record(v, index)).collect();

    // Peaks: runs of equal score that beat both neighbours within their
    // sentence; a run is represented by its middle word.
    let mut peaks: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sentence[j] == sentence[i] && scored[j].1 == scored[i].1 {
            j += 1;
        }
        let s = scored[i].1;
        let left_ok = i == 0 || sentence[i - 1] != sentence[i] || s > scored[i - 1].1;
        let right_ok = j == n || sentence[j] != sentence[i] || s > scored[j].1;
        if s >= cfg.threshold && left_ok && right_ok {
            peaks.push(i + (j - 1 - i) / 2);
        }
        i = j;
    }
    peaks.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    let mut per_sentence = vec![0usize; spans.len()];
    for p in peaks {
        if kept.iter().any(|&k| k.abs_diff(p) <= cfg.window) {
            continue;
        }
        if per_sentence[sentence[p]] >= cfg.per_sentence_cap {
            continue;
        }
        per_sentence[sentence[p]] += 1;
        kept.push(p);
    }
    kept.sort_unstable();
    let annotations: Vec<Annotation> = kept
        .iter()
        .map(|&i| {
            let r = &index.records[scored[i].0];
            Annotation {
                word: i,
                identifier: r.identifier.clone(),
                label: r.label.clone(),
                source: Source::Baseline,
            }
        })
        .collect();
    let report = validate_annotations(&annotations, index);
    RetrievalResult::from_valid(transcript, annotations, report, 0)
}

/// Keep only index-valid annotations inside the transcript; the report
/// covers all of them.
pub fn filter_valid(
    transcript: &TimedTranscript,
    annotations: Vec<Annotation>,
    index: &SemanticIndex,
    retries: u32,
) -> Result<RetrievalResult> {
    let report = validate_annotations(&annotations, index);
    let mut kept = Vec::new();
    for &i in &report.valid {
        if annotations[i].word < transcript.len() {
            kept.push(annotations[i].clone());
        } else {
            log::warn!("dropping annotation past the last word: {:?}", annotations[i]);
        }
    }
    for (i, why) in &report.invalid {
        log::warn!(
            "dropping hallucinated gesture [{} {}] ({why:?})",
            annotations[*i].identifier,
            annotations[*i].label
        );
    }
    RetrievalResult::from_valid(transcript, kept, report, retries)
}
