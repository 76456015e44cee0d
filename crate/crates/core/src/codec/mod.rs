//! Motion tokenizer: windowed linear codec plus residual vector quantization,
//! one independent codec per body part.

pub mod kmeans;
mod linear;
mod loss;
mod rvq;
mod tokens;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use linear::{fit_linear_codec, window_matrix, LinearCodec};
pub use loss::{rvq_loss, LossTerms, LossWeights};
pub use rvq::{
    quantize, train_codebooks, Codebook, CodebookReport, CodecConfig, Fingerprint, LatentSeq,
    Quantized, RvqCodec, TokenGrid,
};
pub use tokens::TokenSeq;

use crate::motion::{
    join_parts, split_parts, to_frame_matrix, BodyPart, FrameLayout, FrameMatrix, MotionClip,
    Skeleton,
};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SGCODEC\0";
const VERSION: u32 = 1;

/// Body and hand codecs together with the skeleton they were trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureCodec {
    pub skeleton: Skeleton,
    pub body: RvqCodec,
    pub hand: Option<RvqCodec>,
    pub config_hash: String,
}

/// Per-part training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecReport {
    pub body: CodebookReport,
    pub hand: Option<CodebookReport>,
}

impl GestureCodec {
    /// Train both parts on clips cut into `clip_frames`-long pieces.
    pub fn train(
        skeleton: &Skeleton,
        clips: &[MotionClip],
        clip_frames: usize,
        cfg: &CodecConfig,
        config_hash: &str,
    ) -> Result<(Self, CodecReport)> {
        let mut bodies = Vec::new();
        let mut hands = Vec::new();
        for clip in clips {
            clip.validate(skeleton)?;
            let m = to_frame_matrix(clip);
            let step = clip_frames.max(cfg.downsample).min(m.rows().max(1));
            let mut start = 0;
            while start + step <= m.rows() {
                let (b, h) = split_parts(&m.row_range(start, start + step), skeleton)?;
                bodies.push(b);
                hands.push(h);
                start += step;
            }
        }
        if bodies.is_empty() {
            return Err(Error::TooShort {
                needed: clip_frames,
                got: clips.iter().map(MotionClip::frame_count).max().unwrap_or(0),
            });
        }
        let (body, body_report) = RvqCodec::train(BodyPart::Body, &bodies, cfg)?;
        let (hand, hand_report) = if hands[0].cols() > 0 {
            let hand_cfg = CodecConfig {
                seed: cfg.seed.wrapping_add(1),
                ..*cfg
            };
            let (c, r) = RvqCodec::train(BodyPart::Hand, &hands, &hand_cfg)?;
            (Some(c), Some(r))
        } else {
            (None, None)
        };
        Ok((
            GestureCodec {
                skeleton: skeleton.clone(),
                body,
                hand,
                config_hash: config_hash.to_string(),
            },
            CodecReport {
                body: body_report,
                hand: hand_report,
            },
        ))
    }

    pub fn fps(&self) -> f64 {
        self.body.fps
    }

    pub fn downsample(&self) -> usize {
        self.body.downsample()
    }

    pub fn split(&self, clip: &MotionClip) -> Result<(FrameMatrix, FrameMatrix)> {
        clip.validate(&self.skeleton)?;
        if clip.param != self.body.layout.param {
            return Err(Error::Config(format!(
                "clip uses {:?} rotations, codec expects {:?}",
                clip.param, self.body.layout.param
            )));
        }
        split_parts(&to_frame_matrix(clip), &self.skeleton)
    }

    pub fn encode(&self, clip: &MotionClip) -> Result<TokenSeq> {
        let (b, h) = self.split(clip)?;
        Ok(TokenSeq {
            body: self.body.encode(&b)?,
            hand: match &self.hand {
                Some(c) => Some(c.encode(&h)?),
                None => None,
            },
        })
    }

    /// Pre-quantization latents per part.
    pub fn latents(&self, clip: &MotionClip) -> Result<(LatentSeq, Option<LatentSeq>)> {
        let (b, h) = self.split(clip)?;
        Ok((
            self.body.latents(&b)?,
            match &self.hand {
                Some(c) => Some(c.latents(&h)?),
                None => None,
            },
        ))
    }

    pub fn check_tokens(&self, tokens: &TokenSeq) -> Result<()> {
        self.body.check_tokens(&tokens.body)?;
        match (&self.hand, &tokens.hand) {
            (Some(c), Some(t)) => c.check_tokens(t)?,
            (None, None) => {}
            (Some(c), None) => {
                return Err(Error::StaleTokens {
                    artifact: "hand tokens".into(),
                    expected: c.fingerprint.0.clone(),
                    found: "-".into(),
                })
            }
            (None, Some(t)) => {
                return Err(Error::StaleTokens {
                    artifact: "hand tokens".into(),
                    expected: "-".into(),
                    found: t.fingerprint.0.clone(),
                })
            }
        }
        if tokens
            .hand
            .as_ref()
            .is_some_and(|h| h.len() != tokens.body.len())
        {
            return Err(Error::Invalid("body and hand token counts differ".into()));
        }
        Ok(())
    }

    pub fn token_latents(&self, tokens: &TokenSeq) -> Result<(LatentSeq, Option<LatentSeq>)> {
        self.check_tokens(tokens)?;
        Ok((
            self.body.token_latents(&tokens.body)?,
            match (&self.hand, &tokens.hand) {
                (Some(c), Some(t)) => Some(c.token_latents(t)?),
                _ => None,
            },
        ))
    }

    pub fn decode(&self, tokens: &TokenSeq) -> Result<MotionClip> {
        let (b, h) = self.token_latents(tokens)?;
        let clip = self.decode_latents(&b, h.as_ref())?;
        Ok(match tokens.body.source_frames {
            Some(k) if k < clip.frame_count() => clip.slice(0, k),
            _ => clip,
        })
    }

    /// Decode raw (possibly blended) latents to `L * d` frames.
    pub fn decode_latents(&self, body: &LatentSeq, hand: Option<&LatentSeq>) -> Result<MotionClip> {
        let b = self.body.decode_latents(body)?;
        let h = match (&self.hand, hand) {
            (Some(c), Some(l)) => c.decode_latents(l)?,
            (None, None) => FrameMatrix {
                fps: b.fps,
                layout: FrameLayout {
                    param: b.layout.param,
                    has_root: false,
                    joints: Vec::new(),
                },
                values: nalgebra::DMatrix::zeros(b.rows(), 0),
            },
            _ => return Err(Error::Invalid("hand latents do not match the codec".into())),
        };
        let m = join_parts(&b, &h)?;
        crate::motion::from_frame_matrix(&m)
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
            return Err(Error::Archive("not a codec archive".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != VERSION {
            return Err(Error::Archive(format!(
                "unsupported codec archive version {version}"
            )));
        }
        let codec: GestureCodec = bincode::deserialize_from(r)?;
        codec.skeleton.validate()?;
        Ok(codec)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
