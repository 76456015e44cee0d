//! Text embedding providers.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::net::{bearer_from_env, content_hash, post_with_retries, JsonRequest, JsonTransport, ResponseCache, RetryPolicy};
use crate::{Error, Result};

pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    /// Identifies the vector space; vectors from different families are not comparable.
    fn family(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn embed_one(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "been", "but", "by", "can", "do", "does",
    "for", "from", "had", "has", "have", "he", "her", "his", "i", "if", "in", "into", "is", "it",
    "its", "me", "my", "of", "on", "or", "our", "she", "so", "that", "the", "their", "them",
    "then", "there", "these", "they", "this", "to", "us", "was", "we", "were", "what", "when",
    "which", "who", "will", "with", "would", "you", "your",
];

fn stem(w: &str) -> String {
    let n = w.len();
    if n > 5 && w.ends_with("ing") {
        w[..n - 3].to_string()
    } else if n > 4 && w.ends_with("ed") {
        w[..n - 2].to_string()
    } else if n > 3 && w.ends_with('s') && !w.ends_with("ss") {
        w[..n - 1].to_string()
    } else {
        w.to_string()
    }
}

/// Lowercased, stopword-free, lightly stemmed terms.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| stem(&w))
        .collect()
}

/// TF-IDF term vectors projected onto the top singular directions of the
/// fitting corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalEmbedder {
    pub vocab: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    /// `E x V`, orthonormal rows.
    pub projection: DMatrix<f64>,
}

impl LexicalEmbedder {
    pub fn fit(corpus: &[String], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let docs: Vec<Vec<String>> = corpus.iter().map(|t| tokenize(t)).collect();
        let mut vocab = BTreeMap::new();
        for d in &docs {
            for w in d {
                let next = vocab.len();
                vocab.entry(w.clone()).or_insert(next);
            }
        }
        // Renumber alphabetically so the layout does not depend on corpus order.
        for (i, v) in vocab.values_mut().enumerate() {
            *v = i;
        }
        let v = vocab.len();
        if v == 0 {
            return Err(Error::Config("embedding corpus has no terms".into()));
        }
        let n = docs.len() as f64;
        let mut df = vec![0.0; v];
        for d in &docs {
            let mut seen: Vec<usize> = d.iter().map(|w| vocab[w]).collect();
            seen.sort_unstable();
            seen.dedup();
            for i in seen {
                df[i] += 1.0;
            }
        }
        let idf: Vec<f64> = df.iter().map(|&f| ((1.0 + n) / (1.0 + f)).ln() + 1.0).collect();
        let mut emb = LexicalEmbedder {
            vocab,
            idf,
            projection: DMatrix::identity(v, v),
        };
        let x = DMatrix::from_fn(docs.len(), v, |r, c| emb.tfidf(&docs[r])[c]);
        let svd = x.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Invalid("SVD did not produce right singular vectors".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
        let e = dim.min(order.len());
        let mut proj = DMatrix::zeros(e, v);
        for (r, &i) in order.iter().take(e).enumerate() {
            let mut row = v_t.row(i).into_owned();
            // Sign convention: largest-magnitude entry positive.
            let imax = (0..v).max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()).then(b.cmp(&a))).unwrap_or(0);
            if row[imax] < 0.0 {
                row.neg_mut();
            }
            proj.row_mut(r).copy_from(&row);
        }
        emb.projection = proj;
        Ok(emb)
    }

    fn tfidf(&self, terms: &[String]) -> DVector<f64> {
        let mut x = DVector::zeros(self.vocab.len());
        for w in terms {
            if let Some(&i) = self.vocab.get(w) {
                x[i] += self.idf[i];
            }
        }
        let norm = x.norm();
        if norm > 0.0 {
            x /= norm;
        }
        x
    }
}

impl EmbeddingProvider for LexicalEmbedder {
    fn dim(&self) -> usize {
        self.projection.nrows()
    }

    fn family(&self) -> String {
        let mut parts: Vec<String> = self.vocab.keys().cloned().collect();
        parts.push(format!("{:?}", self.projection.as_slice()));
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        format!("lexical-{}", &content_hash(&refs)[..16])
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| (&self.projection * self.tfidf(&tokenize(t))).iter().copied().collect())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    /// Environment variable holding the bearer token.
    pub auth_env: String,
    pub timeout_secs: f64,
    pub retry: RetryPolicy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
            dim: 1536,
            auth_env: "SEMGEST_API_KEY".into(),
            timeout_secs: 30.0,
            retry: RetryPolicy::default(),
        }
    }
}

/// Remote embedding endpoint speaking `{model, input}` → `{data: [{embedding}]}`.
pub struct ServiceEmbedder {
    pub config: ServiceConfig,
    transport: Arc<dyn JsonTransport>,
    cache: ResponseCache,
}

impl ServiceEmbedder {
    pub fn new(config: ServiceConfig, transport: Arc<dyn JsonTransport>, cache: ResponseCache) -> Result<Self> {
        if config.timeout_secs <= 0.0 {
            return Err(Error::Config("timeout must be positive".into()));
        }
        Ok(ServiceEmbedder {
            config,
            transport,
            cache,
        })
    }

    fn key(&self, text: &str) -> String {
        content_hash(&["embedding", &self.config.model, text])
    }
}

fn parse_vector(v: &Value, dim: usize) -> Option<Vec<f64>> {
    let arr = v.as_array()?;
    let out: Option<Vec<f64>> = arr.iter().map(Value::as_f64).collect();
    out.filter(|x| x.len() == dim && x.iter().all(|f| f.is_finite()))
}

impl EmbeddingProvider for ServiceEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn family(&self) -> String {
        format!("service-{}", self.config.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut out: Vec<Option<Vec<f64>>> = Vec::with_capacity(texts.len());
        let mut missing = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let hit = self.cache.get(&self.key(t))?.and_then(|v| parse_vector(&v, self.config.dim));
            if hit.is_none() {
                missing.push(i);
            }
            out.push(hit);
        }
        if !missing.is_empty() {
            let input: Vec<&str> = missing.iter().map(|&i| texts[i].as_str()).collect();
            let req = JsonRequest {
                url: self.config.endpoint.clone(),
                headers: bearer_from_env(&self.config.auth_env).into_iter().collect(),
                body: json!({"model": self.config.model, "input": input}),
                timeout: Duration::from_secs_f64(self.config.timeout_secs),
            };
            let (resp, _) = post_with_retries(self.transport.as_ref(), &req, &self.config.retry)?;
            let data = resp["data"].as_array().ok_or_else(|| Error::Format {
                msg: "embedding response lacks data array".into(),
                raw: resp.to_string(),
            })?;
            if data.len() != missing.len() {
                return Err(Error::Format {
                    msg: format!("asked for {} embeddings, got {}", missing.len(), data.len()),
                    raw: resp.to_string(),
                });
            }
            for (&i, item) in missing.iter().zip(data) {
                let v = parse_vector(&item["embedding"], self.config.dim).ok_or_else(|| Error::Format {
                    msg: format!("embedding is not a {}-vector of numbers", self.config.dim),
                    raw: item.to_string(),
                })?;
                self.cache.put(&self.key(&texts[i]), &json!(v))?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.unwrap()).collect())
    }
}
