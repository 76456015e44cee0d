use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub w: String,
    pub start: f64,
    pub end: f64,
}

/// Words with timings; `sentences` holds the index of each sentence's first word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedTranscript {
    pub words: Vec<TimedWord>,
    #[serde(default)]
    pub sentences: Vec<usize>,
}

impl TimedTranscript {
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.words.iter().enumerate() {
            if !(w.start < w.end) || !w.start.is_finite() || !w.end.is_finite() {
                return Err(Error::Config(format!("word {i} ({:?}) has start >= end", w.w)));
            }
            if i > 0 && w.start < self.words[i - 1].start {
                return Err(Error::Config(format!("word {i} starts before word {}", i - 1)));
            }
        }
        if self.sentences.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config("sentence starts must increase".into()));
        }
        if self.sentences.last().is_some_and(|&s| s >= self.words.len()) {
            return Err(Error::Config("sentence start beyond the last word".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: TimedTranscript = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn text(&self) -> String {
        self.words.iter().map(|w| w.w.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn word_texts(&self) -> Vec<String> {
        self.words.iter().map(|w| w.w.clone()).collect()
    }

    pub fn duration(&self) -> f64 {
        self.words.last().map_or(0.0, |w| w.end)
    }

    /// `[start, end)` word ranges, one per sentence. Words before the first
    /// declared start form their own sentence.
    pub fn sentence_spans(&self) -> Vec<(usize, usize)> {
        let mut starts: Vec<usize> = self.sentences.clone();
        if starts.first() != Some(&0) {
            starts.insert(0, 0);
        }
        let n = self.words.len();
        let mut spans = Vec::with_capacity(starts.len());
        for (i, &s) in starts.iter().enumerate() {
            let e = starts.get(i + 1).copied().unwrap_or(n);
            if s < e {
                spans.push((s, e));
            }
        }
        spans
    }

    pub fn sentence_of(&self, word: usize) -> usize {
        self.sentence_spans()
            .iter()
            .position(|&(s, e)| word >= s && word < e)
            .unwrap_or(0)
    }
}

/// Midpoint of the trigger word's time interval.
pub fn trigger_midpoint(t: &TimedTranscript, word: usize) -> Result<f64> {
    let w = t
        .words
        .get(word)
        .ok_or_else(|| Error::OutOfRange(format!("word {word} of {}", t.words.len())))?;
    Ok((w.start + w.end) / 2.0)
}
