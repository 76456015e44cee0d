//! Smoothed conditional count model.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{token_frames, GeneratorModel, TokenFrame, Vocab};
use crate::codec::kmeans::{kmeans, nearest, KMeansConfig};
use crate::codec::TokenSeq;
use crate::motion::BodyPart;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SGGENER\0";
const VERSION: u32 = 1;
const PAD: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Token frames of layer-1 history in each key.
    pub order: usize,
    pub audio_clusters: usize,
    /// Laplace smoothing added to every count.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            order: 2,
            audio_clusters: 64,
            alpha: 1.0,
            seed: 0,
        }
    }
}

/// Standardize, then snap to the nearest cluster centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AudioClusters {
    mean: Vec<f64>,
    scale: Vec<f64>,
    centroids: Vec<Vec<f64>>,
}

impl AudioClusters {
    fn fit(rows: &[Vec<f64>], k: usize, seed: u64) -> Result<Self> {
        let n = rows.len();
        let dim = rows[0].len();
        let mean: Vec<f64> = (0..dim)
            .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64)
            .collect();
        let scale: Vec<f64> = (0..dim)
            .map(|c| {
                let v = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n as f64;
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut pts: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&mean)
                    .zip(&scale)
                    .map(|((x, m), s)| (x - m) / s)
                    .collect()
            })
            .collect();
        // Clustering must not depend on corpus order.
        pts.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let centroids = kmeans(&pts, &KMeansConfig::new(k.clamp(1, n), seed))?.centroids;
        Ok(AudioClusters {
            mean,
            scale,
            centroids,
        })
    }

    fn assign(&self, row: &[f64]) -> Result<u32> {
        if row.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: row.len(),
            });
        }
        let z: Vec<f64> = row
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        Ok(nearest(&z, &self.centroids).0 as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct Key {
    history: Vec<u32>,
    audio: u32,
    lower: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Counts {
    total: f64,
    by_token: BTreeMap<u32, f64>,
}

impl Counts {
    fn add(&mut self, token: u32, w: f64) {
        self.total += w;
        *self.by_token.entry(token).or_insert(0.0) += w;
    }

    fn dist(&self, n: usize, alpha: f64) -> Vec<f64> {
        let denom = self.total + alpha * n as f64;
        if denom <= 0.0 {
            return vec![1.0 / n as f64; n];
        }
        let mut d = vec![alpha / denom; n];
        for (&t, &c) in &self.by_token {
            d[t as usize] = (c + alpha) / denom;
        }
        d
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Table {
    unigram: Counts,
    keyed: BTreeMap<Key, Counts>,
}

/// Count-based stand-in for a neural next-token model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondCategoricalModel {
    pub vocab: Vocab,
    pub config: GeneratorConfig,
    audio: AudioClusters,
    /// Indexed by `part * layers + layer`.
    tables: Vec<Table>,
}

fn part_index(part: BodyPart) -> usize {
    match part {
        BodyPart::Body => 0,
        BodyPart::Hand => 1,
    }
}

/// Training pair for interval-restricted fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct SftExample {
    /// `tokens.len() + 1` rows.
    pub features: DMatrix<f64>,
    /// Full sequence with the semantic tokens already in place.
    pub tokens: TokenSeq,
    /// Token frames `[start, end)` whose targets are boosted.
    pub interval: (usize, usize),
}

impl CondCategoricalModel {
    fn history_key(&self, history: &[TokenFrame]) -> Vec<u32> {
        let n = self.config.order;
        let hand = self.vocab.hand_size.is_some();
        let mut key = Vec::with_capacity(n * 2);
        for i in 0..n {
            // Oldest first; frames before the sequence start are padding.
            match (history.len() + i).checked_sub(n) {
                Some(j) => {
                    key.push(history[j].body[0]);
                    if hand {
                        key.push(history[j].hand[0]);
                    }
                }
                None => {
                    key.push(PAD);
                    if hand {
                        key.push(PAD);
                    }
                }
            }
        }
        key
    }

    fn table_index(&self, part: BodyPart, layer: usize) -> Result<usize> {
        if layer >= self.vocab.layers {
            return Err(Error::OutOfRange(format!(
                "layer {layer} of {}",
                self.vocab.layers
            )));
        }
        if part == BodyPart::Hand && self.vocab.hand_size.is_none() {
            return Err(Error::Config("model has no hand part".into()));
        }
        Ok(part_index(part) * self.vocab.layers + layer)
    }

    /// The count cell a position reads from, `None` for the unigram.
    fn key_for(&self, history: &[TokenFrame], audio: &[f64], lower: &[u32]) -> Result<Option<Key>> {
        let cluster = self.audio.assign(audio)?;
        if history.is_empty() {
            return Ok(None);
        }
        Ok(Some(Key {
            history: self.history_key(history),
            audio: cluster,
            lower: lower.to_vec(),
        }))
    }

    /// Count positions in `range`. Training also feeds every position into
    /// the unigram; fine-tuning touches only the cell each position reads.
    fn add(
        &mut self,
        frames: &[TokenFrame],
        features: &DMatrix<f64>,
        range: (usize, usize),
        weight: f64,
        marginal: bool,
    ) -> Result<()> {
        for l in range.0..range.1 {
            let audio: Vec<f64> = features.row(l + 1).iter().copied().collect();
            for part in self.vocab.parts() {
                let toks = frames[l].part(part).to_vec();
                for layer in 0..self.vocab.layers {
                    let ti = self.table_index(part, layer)?;
                    let key = self.key_for(&frames[..l], &audio, &toks[..layer])?;
                    let table = &mut self.tables[ti];
                    match key {
                        None => table.unigram.add(toks[layer], weight),
                        Some(k) => {
                            if marginal {
                                table.unigram.add(toks[layer], weight);
                            }
                            table.keyed.entry(k).or_default().add(toks[layer], weight);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Keyed cells present in the model, for diffing tables.
    pub fn cell_count(&self) -> usize {
        self.tables.iter().map(|t| t.keyed.len()).sum()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        bincode::serialize_into(&mut w, self)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Archive("not a generator archive".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        if u32::from_le_bytes(v) != VERSION {
            return Err(Error::Archive(
                "unsupported generator archive version".into(),
            ));
        }
        Ok(bincode::deserialize_from(r)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl GeneratorModel for CondCategoricalModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token_dist(
        &self,
        history: &[TokenFrame],
        audio: &[f64],
        lower: &[u32],
        part: BodyPart,
        layer: usize,
    ) -> Result<Vec<f64>> {
        let ti = self.table_index(part, layer)?;
        if lower.len() != layer {
            return Err(Error::DimensionMismatch {
                expected: layer,
                got: lower.len(),
            });
        }
        let n = self.vocab.size(part);
        let table = &self.tables[ti];
        Ok(match self.key_for(history, audio, lower)? {
            None => table.unigram.dist(n, self.config.alpha),
            Some(k) => match table.keyed.get(&k) {
                Some(c) => c.dist(n, self.config.alpha),
                None => vec![1.0 / n as f64; n],
            },
        })
    }
}

fn check_pair(vocab: &Vocab, tokens: &TokenSeq, features: &DMatrix<f64>) -> Result<()> {
    vocab.check(tokens)?;
    if features.nrows() < tokens.len() + 1 {
        return Err(Error::Alignment(format!(
            "{} tokens need {} feature frames, got {}",
            tokens.len(),
            tokens.len() + 1,
            features.nrows()
        )));
    }
    for (part, size) in [
        (BodyPart::Body, vocab.body_size),
        (BodyPart::Hand, vocab.hand_size.unwrap_or(0)),
    ] {
        let grid = match part {
            BodyPart::Body => Some(&tokens.body),
            BodyPart::Hand => tokens.hand.as_ref(),
        };
        if let Some(g) = grid {
            if g.frames.iter().any(|f| f.len() != vocab.layers) {
                return Err(Error::DimensionMismatch {
                    expected: vocab.layers,
                    got: g
                        .frames
                        .iter()
                        .map(Vec::len)
                        .find(|&n| n != vocab.layers)
                        .unwrap_or(0),
                });
            }
            if let Some(bad) = g.frames.iter().flatten().find(|&&t| t as usize >= size) {
                return Err(Error::OutOfRange(format!(
                    "token {bad} >= vocabulary {size}"
                )));
            }
        }
    }
    Ok(())
}

/// Fit counts on `(tokens, features)` pairs; features carry one lookahead row.
pub fn fit_generator(
    corpora: &[(TokenSeq, DMatrix<f64>)],
    vocab: Vocab,
    cfg: &GeneratorConfig,
) -> Result<CondCategoricalModel> {
    if corpora.is_empty() {
        return Err(Error::Config("no training sequences".into()));
    }
    if cfg.alpha < 0.0 || !cfg.alpha.is_finite() {
        return Err(Error::Config(
            "smoothing alpha must be finite and non-negative".into(),
        ));
    }
    for (t, f) in corpora {
        check_pair(&vocab, t, f)?;
    }
    let dim = corpora[0].1.ncols();
    let mut rows = Vec::new();
    for (t, f) in corpora {
        if f.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.ncols(),
            });
        }
        rows.extend((1..=t.len()).map(|r| f.row(r).iter().copied().collect::<Vec<f64>>()));
    }
    if rows.is_empty() {
        return Err(Error::Config("training sequences are empty".into()));
    }
    let audio = AudioClusters::fit(&rows, cfg.audio_clusters, cfg.seed)?;
    let parts = if vocab.hand_size.is_some() { 2 } else { 1 };
    let mut model = CondCategoricalModel {
        tables: vec![Table::default(); parts * vocab.layers],
        vocab,
        config: *cfg,
        audio,
    };
    for (t, f) in corpora {
        let frames = token_frames(t);
        model.add(&frames, f, (0, frames.len()), 1.0, true)?;
    }
    Ok(model)
}

/// Add `boost` pseudo-counts for the example targets inside their merge
/// intervals. Cells read by positions outside every interval are untouched.
pub fn sft_finetune(
    model: &CondCategoricalModel,
    examples: &[SftExample],
    boost: f64,
) -> Result<CondCategoricalModel> {
    if boost < 0.0 || !boost.is_finite() {
        return Err(Error::Config(
            "boost weight must be finite and non-negative".into(),
        ));
    }
    let mut out = model.clone();
    for ex in examples {
        check_pair(&model.vocab, &ex.tokens, &ex.features)?;
        let (s, e) = ex.interval;
        if s >= e || e > ex.tokens.len() {
            return Err(Error::OutOfRange(format!(
                "merge interval [{s}, {e}) outside a {}-frame sequence",
                ex.tokens.len()
            )));
        }
        if boost > 0.0 {
            out.add(
                &token_frames(&ex.tokens),
                &ex.features,
                (s, e),
                boost,
                false,
            )?;
        }
    }
    Ok(out)
}
