//! Distribution distance, text-motion consistency, and retrieval metrics.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::codec::GestureCodec;
use crate::index::{cosine, temporal_mean_latent, EmbeddingProvider, SemanticIndex};
use crate::motion::MotionClip;
use crate::retrieval::{validate_annotations, Annotation, ChatClient};
use crate::{Error, Result};

/// `n` samples of an `F`-dimensional feature, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCloud {
    pub values: DMatrix<f64>,
    pub tag: String,
}

impl FeatureCloud {
    pub fn new(values: DMatrix<f64>, tag: impl Into<String>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature cloud holds non-finite values".into()));
        }
        Ok(FeatureCloud {
            values,
            tag: tag.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], tag: impl Into<String>) -> Result<Self> {
        let f = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != f) {
            return Err(Error::DimensionMismatch {
                expected: f,
                got: r.len(),
            });
        }
        FeatureCloud::new(DMatrix::from_fn(rows.len(), f, |i, j| rows[i][j]), tag)
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn mean(&self) -> DVector<f64> {
        self.values.row_mean().transpose()
    }

    /// Sample covariance, shrunk toward a scaled identity when too few
    /// samples or a near-singular spectrum would make it unusable.
    pub fn covariance(&self) -> (DMatrix<f64>, bool) {
        let n = self.len();
        let f = self.dim();
        let mu = self.mean();
        let mut centered = self.values.clone();
        for mut row in centered.row_iter_mut() {
            row -= mu.transpose();
        }
        let mut cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
        let max = eig.iter().cloned().fold(0.0, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let shrink = n < f + 1 || min <= 1e-12 * max.max(f64::MIN_POSITIVE);
        if shrink {
            let eps = (1e-6 * cov.trace() / f.max(1) as f64).max(1e-12);
            log::info!("{}: covariance shrinkage with eps {eps:.3e} ({n} samples, {f} dims)", self.tag);
            for i in 0..f {
                cov[(i, i)] += eps;
            }
        }
        (cov, shrink)
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Frechet distance between Gaussian fits of two clouds.
pub fn fgd(a: &FeatureCloud, b: &FeatureCloud) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (ca, _) = a.covariance();
    let (cb, _) = b.covariance();
    Ok(frechet_gaussian(&a.mean(), &ca, &b.mean(), &cb))
}

/// Squared 2-Wasserstein distance between two Gaussians.
pub fn frechet_gaussian(ma: &DVector<f64>, ca: &DMatrix<f64>, mb: &DVector<f64>, cb: &DMatrix<f64>) -> f64 {
    let sa = psd_sqrt(ca);
    let inner = &sa * cb * &sa;
    let e = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let tr_sqrt: f64 = e.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
    d.max(0.0)
}

/// Linear map from motion latents into a text embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModalMap {
    /// `E x F`, applied as `W x`.
    pub weights: DMatrix<f64>,
    pub lambda: f64,
    pub motion_fingerprint: String,
    pub text_family: String,
    /// Training squared residual of the fitted map and of the zero map.
    pub residual: f64,
    pub zero_residual: f64,
}

impl CrossModalMap {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.weights.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.ncols(),
                got: x.len(),
            });
        }
        Ok((&self.weights * DVector::from_column_slice(x)).iter().copied().collect())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Ridge regression `W = Y^T X (X^T X + lambda I)^-1` over `(latent, text)` pairs.
pub fn fit_crossmodal_map(
    pairs: &[(Vec<f64>, Vec<f64>)],
    lambda: f64,
    motion_fingerprint: &str,
    text_family: &str,
) -> Result<CrossModalMap> {
    if pairs.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let (f, e) = (pairs[0].0.len(), pairs[0].1.len());
    for (x, y) in pairs {
        if x.len() != f || y.len() != e {
            return Err(Error::DimensionMismatch {
                expected: f,
                got: x.len(),
            });
        }
    }
    let n = pairs.len();
    let x = DMatrix::from_fn(n, f, |i, j| pairs[i].0[j]);
    let y = DMatrix::from_fn(n, e, |i, j| pairs[i].1[j]);
    let mut gram = x.transpose() * &x;
    for i in 0..f {
        gram[(i, i)] += lambda;
    }
    let rhs = x.transpose() * &y;
    let solved = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|m| Error::Invalid(m.to_string()))?,
    };
    let weights = solved.transpose();
    let residual = (&x * weights.transpose() - &y).norm_squared();
    Ok(CrossModalMap {
        weights,
        lambda,
        motion_fingerprint: motion_fingerprint.to_string(),
        text_family: text_family.to_string(),
        residual,
        zero_residual: y.norm_squared(),
    })
}

/// Cosine between the mapped mean latent of `clip` and the embedding of `text`.
pub fn sc(
    clip: &MotionClip,
    text: &str,
    map: &CrossModalMap,
    provider: &dyn EmbeddingProvider,
    codec: &GestureCodec,
) -> Result<f64> {
    if provider.family() != map.text_family {
        return Err(Error::Config(format!(
            "map targets {}, provider is {}",
            map.text_family,
            provider.family()
        )));
    }
    let z = map.apply(&temporal_mean_latent(clip, codec)?)?;
    Ok(cosine(&z, &provider.embed_one(text)?))
}

/// Share of annotations that name an existing gesture; 1 for none.
pub fn retrieval_accuracy(annotations: &[Annotation], index: &SemanticIndex) -> f64 {
    validate_annotations(annotations, index).ratio()
}

pub const DEFAULT_SCORER_PROMPT: &str = "You rate how well gestures inserted into a transcript \
match what is being said. Gestures appear inline as [<identifier> <LABEL>] right after the word \
they accompany. Reply with a single integer from 1 (unrelated) to 10 (ideal).";

/// First integer in `reply` within 1..=10.
pub fn parse_score(reply: &str) -> Option<f64> {
    reply
        .split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
        .find_map(|t| t.parse::<u32>().ok())
        .filter(|v| (1..=10).contains(v))
        .map(f64::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub run: usize,
    pub item: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    /// Mean over runs of the per-run item mean.
    pub mean: f64,
    /// Population standard deviation of the per-run means.
    pub std: f64,
    pub runs: usize,
    pub items: Vec<ItemScore>,
    pub skipped: usize,
}

/// Rate each annotated text `runs` times with the scorer.
pub fn semantic_matching_score(
    annotated: &[String],
    client: &ChatClient,
    prompt: &str,
    runs: usize,
) -> Result<ScoreSummary> {
    let mut items = Vec::new();
    let mut skipped = 0;
    let mut run_means = Vec::new();
    for run in 0..runs.max(1) {
        let mut scores = Vec::new();
        for (i, text) in annotated.iter().enumerate() {
            let (reply, _) = client.complete_salted(prompt, text, &format!("run {run}"))?;
            match parse_score(&reply) {
                Some(score) => {
                    scores.push(score);
                    items.push(ItemScore { run, item: i, score });
                }
                None => {
                    log::warn!("run {run} item {i}: no score in reply {reply:?}");
                    skipped += 1;
                }
            }
        }
        if !scores.is_empty() {
            run_means.push(scores.iter().sum::<f64>() / scores.len() as f64);
        }
    }
    if run_means.is_empty() {
        return Err(Error::Format {
            msg: "scorer produced no usable score".into(),
            raw: String::new(),
        });
    }
    let (mean, std) = mean_std(&run_means);
    Ok(ScoreSummary {
        mean,
        std,
        runs: runs.max(1),
        items,
        skipped,
    })
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One line of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub std: Option<f64>,
    pub n: usize,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

/// `label,value` rows with a header.
pub fn write_csv<W: Write>(mut w: W, header: (&str, &str), rows: &[(String, f64)]) -> Result<()> {
    writeln!(w, "{},{}", header.0, header.1)?;
    for (k, v) in rows {
        let k = if k.contains([',', '"', '\n']) {
            format!("\"{}\"", k.replace('"', "\"\""))
        } else {
            k.clone()
        };
        writeln!(w, "{k},{v}")?;
    }
    Ok(())
}
