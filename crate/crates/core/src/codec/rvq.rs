//! Residual vector quantization over the linear codec's latent space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::kmeans::{kmeans, nearest, sq_dist, KMeansConfig};
use super::linear::{fit_linear_codec, LinearCodec};
use crate::motion::{BodyPart, FrameLayout, FrameMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub layer: usize,
    pub entries: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, Vec::len)
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.min(sq_dist(&self.entries[i], &self.entries[j]).sqrt());
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub indices: Vec<usize>,
    pub sum: Vec<f64>,
    pub residue: Vec<f64>,
}

/// Layer by layer: pick the entry nearest the running residue (lowest index
/// on ties), subtract it, continue.
pub fn quantize(z: &[f64], codebooks: &[Codebook]) -> Result<Quantized> {
    if codebooks.is_empty() || codebooks.iter().any(Codebook::is_empty) {
        return Err(Error::Config("quantizer needs non-empty codebooks".into()));
    }
    let mut residue = z.to_vec();
    let mut sum = vec![0.0; z.len()];
    let mut indices = Vec::with_capacity(codebooks.len());
    for cb in codebooks {
        if cb.dim() != z.len() {
            return Err(Error::DimensionMismatch {
                expected: cb.dim(),
                got: z.len(),
            });
        }
        let (i, _) = nearest(&residue, &cb.entries);
        for ((r, s), e) in residue.iter_mut().zip(sum.iter_mut()).zip(&cb.entries[i]) {
            *r -= e;
            *s += e;
        }
        indices.push(i);
    }
    Ok(Quantized {
        indices,
        sum,
        residue,
    })
}

/// Per-layer training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookReport {
    /// Mean squared residue norm entering layer 1 (the raw latents).
    pub initial_energy: f64,
    /// Mean squared residue norm after each layer.
    pub layer_energy: Vec<f64>,
}

fn separate_duplicates(entries: &mut [Vec<f64>]) {
    let scale = 1e-6 * (1.0 + entries.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())));
    for i in 1..entries.len() {
        let mut bump = 1.0;
        while entries[..i].iter().any(|e| e == &entries[i]) {
            let dim = entries[i].len();
            entries[i][(i + bump as usize) % dim] += scale * bump;
            bump += 1.0;
        }
    }
}

/// Greedy residual k-means: layer 1 clusters the latents, each later layer
/// clusters the residues left by the layers before it.
pub fn train_codebooks(
    latents: &[Vec<f64>],
    layers: usize,
    size: usize,
    seed: u64,
) -> Result<(Vec<Codebook>, CodebookReport)> {
    if layers == 0 {
        return Err(Error::Config("need at least one quantization layer".into()));
    }
    if size == 0 || size > latents.len() {
        return Err(Error::Config(format!(
            "codebook size {size} needs at least that many latents, got {}",
            latents.len()
        )));
    }
    let n = latents.len() as f64;
    let mut residues = latents.to_vec();
    let energy = |r: &[Vec<f64>]| {
        r.iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / n
    };
    let mut report = CodebookReport {
        initial_energy: energy(&residues),
        layer_energy: Vec::with_capacity(layers),
    };
    let mut books = Vec::with_capacity(layers);
    for layer in 0..layers {
        let cfg = KMeansConfig::new(size, seed.wrapping_add(0x9E37_79B9 * layer as u64));
        let mut entries = kmeans(&residues, &cfg)?.centroids;
        separate_duplicates(&mut entries);
        for r in residues.iter_mut() {
            let (i, _) = nearest(r, &entries);
            for (x, e) in r.iter_mut().zip(&entries[i]) {
                *x -= e;
            }
        }
        report.layer_energy.push(energy(&residues));
        books.push(Codebook { layer, entries });
    }
    Ok((books, report))
}

/// Short content hash binding tokens to the codec that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub String);

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvqCodec {
    pub part: BodyPart,
    pub fps: f64,
    pub layout: FrameLayout,
    pub linear: LinearCodec,
    pub codebooks: Vec<Codebook>,
    pub fingerprint: Fingerprint,
}

/// Training knobs for one body part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub downsample: usize,
    pub latent_dim: usize,
    pub layers: usize,
    pub codebook_size: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            downsample: 8,
            latent_dim: 64,
            layers: 4,
            codebook_size: 512,
            seed: 0,
        }
    }
}

impl RvqCodec {
    pub fn new(
        part: BodyPart,
        fps: f64,
        layout: FrameLayout,
        linear: LinearCodec,
        codebooks: Vec<Codebook>,
    ) -> Self {
        let fingerprint = compute_fingerprint(part, fps, &layout, &linear, &codebooks);
        RvqCodec {
            part,
            fps,
            layout,
            linear,
            codebooks,
            fingerprint,
        }
    }

    /// Fit the linear codec on `clips`, then the residual codebooks on the
    /// training latents.
    pub fn train(
        part: BodyPart,
        clips: &[FrameMatrix],
        cfg: &CodecConfig,
    ) -> Result<(Self, CodebookReport)> {
        let first = clips
            .first()
            .ok_or_else(|| Error::Config("no training clips".into()))?;
        if let Some(bad) = clips.iter().find(|c| c.layout != first.layout) {
            return Err(Error::DimensionMismatch {
                expected: first.cols(),
                got: bad.cols(),
            });
        }
        let linear = fit_linear_codec(clips, cfg.downsample, cfg.latent_dim)?;
        let x = super::linear::window_matrix(clips, cfg.downsample)?;
        let latents: Vec<Vec<f64>> = (0..x.nrows())
            .map(|r| {
                linear
                    .encode_window(&x.row(r).transpose())
                    .iter()
                    .copied()
                    .collect()
            })
            .collect();
        let (codebooks, report) =
            train_codebooks(&latents, cfg.layers, cfg.codebook_size, cfg.seed)?;
        Ok((
            RvqCodec::new(part, first.fps, first.layout.clone(), linear, codebooks),
            report,
        ))
    }

    pub fn downsample(&self) -> usize {
        self.linear.downsample
    }

    pub fn layers(&self) -> usize {
        self.codebooks.len()
    }

    pub fn codebook_size(&self) -> usize {
        self.codebooks.first().map_or(0, Codebook::len)
    }

    pub fn latent_dim(&self) -> usize {
        self.linear.latent_dim
    }

    fn check_input(&self, m: &FrameMatrix) -> Result<()> {
        if m.layout != self.layout {
            return Err(Error::Config(format!(
                "{} codec expects {} columns with its own layout, got {}",
                self.part.as_str(),
                self.layout.width(),
                m.cols()
            )));
        }
        if m.rows() == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        Ok(())
    }

    /// Pre-quantization latents, one row per token frame. The last window is
    /// padded by repeating the final frame.
    pub fn latents(&self, m: &FrameMatrix) -> Result<LatentSeq> {
        self.check_input(m)?;
        let d = self.downsample();
        let dim = self.linear.frame_dim;
        let k = m.rows();
        let l = k.div_ceil(d);
        let mut out = DMatrix::zeros(l, self.latent_dim());
        let mut window = DVector::zeros(d * dim);
        for t in 0..l {
            for f in 0..d {
                let src = (t * d + f).min(k - 1);
                for c in 0..dim {
                    window[f * dim + c] = m.values[(src, c)];
                }
            }
            out.row_mut(t)
                .copy_from(&self.linear.encode_window(&window).transpose());
        }
        Ok(LatentSeq {
            part: self.part,
            values: out,
        })
    }

    pub fn encode(&self, m: &FrameMatrix) -> Result<TokenGrid> {
        let latents = self.latents(m)?;
        let mut frames = Vec::with_capacity(latents.len());
        for row in latents.values.row_iter() {
            let z: Vec<f64> = row.iter().copied().collect();
            let q = quantize(&z, &self.codebooks)?;
            frames.push(q.indices.into_iter().map(|i| i as u32).collect());
        }
        Ok(TokenGrid {
            part: self.part,
            fingerprint: self.fingerprint.clone(),
            frames,
            source_frames: Some(m.rows()),
        })
    }

    /// Sum of the selected codebook entries per token frame.
    pub fn token_latents(&self, tokens: &TokenGrid) -> Result<LatentSeq> {
        self.check_tokens(tokens)?;
        let mut out = DMatrix::zeros(tokens.len(), self.latent_dim());
        for (t, frame) in tokens.frames.iter().enumerate() {
            for (layer, &idx) in frame.iter().enumerate() {
                let e = &self.codebooks[layer].entries[idx as usize];
                for (c, v) in e.iter().enumerate() {
                    out[(t, c)] += v;
                }
            }
        }
        Ok(LatentSeq {
            part: self.part,
            values: out,
        })
    }

    pub fn check_tokens(&self, tokens: &TokenGrid) -> Result<()> {
        if tokens.fingerprint != self.fingerprint {
            return Err(Error::StaleTokens {
                artifact: format!("{} tokens", tokens.part.as_str()),
                expected: self.fingerprint.0.clone(),
                found: tokens.fingerprint.0.clone(),
            });
        }
        let n = self.codebook_size() as u32;
        for frame in &tokens.frames {
            if frame.len() != self.layers() {
                return Err(Error::DimensionMismatch {
                    expected: self.layers(),
                    got: frame.len(),
                });
            }
            if let Some(&bad) = frame.iter().find(|&&i| i >= n) {
                return Err(Error::OutOfRange(format!(
                    "token {bad} >= codebook size {n}"
                )));
            }
        }
        Ok(())
    }

    /// `L * d` frames from raw latents.
    pub fn decode_latents(&self, latents: &LatentSeq) -> Result<FrameMatrix> {
        if latents.values.ncols() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                got: latents.values.ncols(),
            });
        }
        let d = self.downsample();
        let dim = self.linear.frame_dim;
        let l = latents.len();
        let mut values = DMatrix::zeros(l * d, dim);
        for t in 0..l {
            let w = self
                .linear
                .decode_window(&latents.values.row(t).transpose());
            for f in 0..d {
                for c in 0..dim {
                    values[(t * d + f, c)] = w[f * dim + c];
                }
            }
        }
        Ok(FrameMatrix {
            fps: self.fps,
            layout: self.layout.clone(),
            values,
        })
    }

    /// Decode tokens, trimming edge padding when the source length is known.
    pub fn decode(&self, tokens: &TokenGrid) -> Result<FrameMatrix> {
        let latents = self.token_latents(tokens)?;
        let m = self.decode_latents(&latents)?;
        Ok(match tokens.source_frames {
            Some(k) if k < m.rows() => m.row_range(0, k),
            _ => m,
        })
    }
}

fn compute_fingerprint(
    part: BodyPart,
    fps: f64,
    layout: &FrameLayout,
    linear: &LinearCodec,
    codebooks: &[Codebook],
) -> Fingerprint {
    let mut h = Sha256::new();
    h.update(part.as_str().as_bytes());
    h.update(fps.to_le_bytes());
    h.update([layout.has_root as u8, layout.param.block_len() as u8]);
    for &j in &layout.joints {
        h.update((j as u64).to_le_bytes());
    }
    for v in [linear.downsample, linear.frame_dim, linear.latent_dim] {
        h.update((v as u64).to_le_bytes());
    }
    for v in linear.mean.iter().chain(linear.encoder.iter()) {
        h.update(v.to_le_bytes());
    }
    for cb in codebooks {
        h.update((cb.len() as u64).to_le_bytes());
        for v in cb.entries.iter().flatten() {
            h.update(v.to_le_bytes());
        }
    }
    Fingerprint(hex::encode(&h.finalize()[..8]))
}

/// Continuous latents, one row per token frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeq {
    pub part: BodyPart,
    pub values: DMatrix<f64>,
}

impl LatentSeq {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Mean over token frames.
    pub fn temporal_mean(&self) -> Vec<f64> {
        let l = self.len().max(1) as f64;
        (0..self.values.ncols())
            .map(|c| self.values.column(c).sum() / l)
            .collect()
    }
}

/// Codebook indices for one body part: one row per token frame, one column
/// per quantization layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub part: BodyPart,
    pub fingerprint: Fingerprint,
    pub frames: Vec<Vec<u32>>,
    /// Frame count before padding to a whole number of windows.
    pub source_frames: Option<usize>,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> TokenGrid {
        TokenGrid {
            part: self.part,
            fingerprint: self.fingerprint.clone(),
            frames: self.frames[start..end].to_vec(),
            source_frames: None,
        }
    }
}
