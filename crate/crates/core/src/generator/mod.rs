//! Autoregressive token generation conditioned on audio features.

mod count;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use count::{fit_generator, sft_finetune, CondCategoricalModel, GeneratorConfig, SftExample};

use crate::codec::{Fingerprint, GestureCodec, TokenGrid, TokenSeq};
use crate::motion::BodyPart;
use crate::{Error, Result};

/// Token spaces a generator emits into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub layers: usize,
    pub body_size: usize,
    pub hand_size: Option<usize>,
    pub body_fingerprint: Fingerprint,
    pub hand_fingerprint: Option<Fingerprint>,
}

impl Vocab {
    pub fn of(codec: &GestureCodec) -> Vocab {
        Vocab {
            layers: codec.body.layers(),
            body_size: codec.body.codebook_size(),
            hand_size: codec.hand.as_ref().map(|h| h.codebook_size()),
            body_fingerprint: codec.body.fingerprint.clone(),
            hand_fingerprint: codec.hand.as_ref().map(|h| h.fingerprint.clone()),
        }
    }

    pub fn size(&self, part: BodyPart) -> usize {
        match part {
            BodyPart::Body => self.body_size,
            BodyPart::Hand => self.hand_size.unwrap_or(0),
        }
    }

    pub fn parts(&self) -> Vec<BodyPart> {
        if self.hand_size.is_some() {
            vec![BodyPart::Body, BodyPart::Hand]
        } else {
            vec![BodyPart::Body]
        }
    }

    /// Error unless `tokens` were produced by the codecs this vocabulary names.
    pub fn check(&self, tokens: &TokenSeq) -> Result<()> {
        let stale =
            |artifact: &str, expected: &Fingerprint, found: &Fingerprint| Error::StaleTokens {
                artifact: artifact.into(),
                expected: expected.0.clone(),
                found: found.0.clone(),
            };
        if tokens.body.fingerprint != self.body_fingerprint {
            return Err(stale(
                "body tokens",
                &self.body_fingerprint,
                &tokens.body.fingerprint,
            ));
        }
        match (&self.hand_fingerprint, &tokens.hand) {
            (Some(e), Some(h)) if *e != h.fingerprint => {
                return Err(stale("hand tokens", e, &h.fingerprint))
            }
            (Some(_), Some(_)) | (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "token sequence and generator disagree on hand part".into(),
                ))
            }
        }
        Ok(())
    }
}

/// All layers of both parts at one token frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFrame {
    pub body: Vec<u32>,
    pub hand: Vec<u32>,
}

impl TokenFrame {
    pub fn part(&self, part: BodyPart) -> &[u32] {
        match part {
            BodyPart::Body => &self.body,
            BodyPart::Hand => &self.hand,
        }
    }
}

pub fn token_frames(tokens: &TokenSeq) -> Vec<TokenFrame> {
    (0..tokens.len())
        .map(|l| TokenFrame {
            body: tokens.body.frames[l].clone(),
            hand: tokens
                .hand
                .as_ref()
                .map_or_else(Vec::new, |h| h.frames[l].clone()),
        })
        .collect()
}

pub trait GeneratorModel {
    fn vocab(&self) -> &Vocab;

    /// Distribution of the token at (`part`, `layer`) of the next frame.
    ///
    /// `history` holds the frames before it, `audio` is the feature row one
    /// frame ahead of it, and `lower` the already chosen layers `< layer` of
    /// the same part and frame. Empty history backs off to the unigram.
    fn next_token_dist(
        &self,
        history: &[TokenFrame],
        audio: &[f64],
        lower: &[u32],
        part: BodyPart,
        layer: usize,
    ) -> Result<Vec<f64>>;
}

/// Keep the `top_k` most probable entries (ties to the lower index) and
/// renormalize.
pub fn top_k_renormalize(dist: &[f64], top_k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; dist.len()];
    let kept = &order[..top_k.min(dist.len())];
    let total: f64 = kept.iter().map(|&i| dist[i]).sum();
    for &i in kept {
        out[i] = if total > 0.0 {
            dist[i] / total
        } else {
            1.0 / kept.len() as f64
        };
    }
    out
}

fn draw(dist: &[f64], rng: &mut ChaCha8Rng) -> u32 {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if x < acc {
            return i as u32;
        }
    }
    last as u32
}

/// Sample `length` token frames. Layers go 1..R within a frame, body before
/// hand. `features` needs `length + 1` rows.
pub fn sample_sequence(
    model: &dyn GeneratorModel,
    features: &DMatrix<f64>,
    length: usize,
    top_k: usize,
    seed: u64,
) -> Result<TokenSeq> {
    if top_k < 1 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    if features.nrows() < length + 1 {
        return Err(Error::TooShort {
            needed: length + 1,
            got: features.nrows(),
        });
    }
    let vocab = model.vocab().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames: Vec<TokenFrame> = Vec::with_capacity(length);
    for l in 0..length {
        let audio: Vec<f64> = features.row(l + 1).iter().copied().collect();
        let mut frame = TokenFrame {
            body: Vec::new(),
            hand: Vec::new(),
        };
        for part in vocab.parts() {
            let mut chosen = Vec::with_capacity(vocab.layers);
            for layer in 0..vocab.layers {
                let dist = model.next_token_dist(&frames, &audio, &chosen, part, layer)?;
                chosen.push(draw(&top_k_renormalize(&dist, top_k), &mut rng));
            }
            match part {
                BodyPart::Body => frame.body = chosen,
                BodyPart::Hand => frame.hand = chosen,
            }
        }
        frames.push(frame);
    }
    let grid = |part: BodyPart, fp: Fingerprint| TokenGrid {
        part,
        fingerprint: fp,
        frames: frames.iter().map(|f| f.part(part).to_vec()).collect(),
        source_frames: None,
    };
    Ok(TokenSeq {
        body: grid(BodyPart::Body, vocab.body_fingerprint.clone()),
        hand: vocab
            .hand_fingerprint
            .clone()
            .map(|fp| grid(BodyPart::Hand, fp)),
    })
}

/// Per-token perplexity of `tokens` under `model`.
pub fn perplexity(
    model: &dyn GeneratorModel,
    tokens: &TokenSeq,
    features: &DMatrix<f64>,
) -> Result<f64> {
    let vocab = model.vocab();
    vocab.check(tokens)?;
    if features.nrows() < tokens.len() + 1 {
        return Err(Error::TooShort {
            needed: tokens.len() + 1,
            got: features.nrows(),
        });
    }
    let frames = token_frames(tokens);
    let mut nll = 0.0;
    let mut count = 0usize;
    for l in 0..frames.len() {
        let audio: Vec<f64> = features.row(l + 1).iter().copied().collect();
        for part in vocab.parts() {
            let toks = frames[l].part(part);
            for layer in 0..vocab.layers {
                let dist =
                    model.next_token_dist(&frames[..l], &audio, &toks[..layer], part, layer)?;
                nll -= dist[toks[layer] as usize].max(f64::MIN_POSITIVE).ln();
                count += 1;
            }
        }
    }
    Ok((nll / count.max(1) as f64).exp())
}
