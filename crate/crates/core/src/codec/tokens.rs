//! Two-part token sequences and their text form.
//!
//! ```text
//! # tokens body=<fingerprint> hand=<fingerprint> frames=<source frames>
//! 12 3 40 7 | 5 5 0 19
//! ```

use std::fmt::Write as _;

use super::rvq::{Fingerprint, TokenGrid};
use crate::motion::BodyPart;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TokenSeq {
    pub body: TokenGrid,
    /// Absent when the skeleton has no hand joints.
    pub hand: Option<TokenGrid>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> TokenSeq {
        TokenSeq {
            body: self.body.slice(start, end),
            hand: self.hand.as_ref().map(|h| h.slice(start, end)),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let hand_fp = self.hand.as_ref().map_or("-", |h| h.fingerprint.0.as_str());
        write!(
            s,
            "# tokens body={} hand={}",
            self.body.fingerprint, hand_fp
        )
        .unwrap();
        if let Some(k) = self.body.source_frames {
            write!(s, " frames={k}").unwrap();
        }
        s.push('\n');
        for t in 0..self.len() {
            let join = |f: &[u32]| f.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
            s.push_str(&join(&self.body.frames[t]));
            s.push_str(" |");
            if let Some(h) = &self.hand {
                s.push(' ');
                s.push_str(&join(&h.frames[t]));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<TokenSeq> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty token file"))?;
        let mut body_fp = None;
        let mut hand_fp = None;
        let mut frames = None;
        let rest = header
            .strip_prefix("# tokens")
            .ok_or_else(|| Error::parse(1, "missing '# tokens' header"))?;
        for field in rest.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::parse(1, format!("bad header field {field:?}")))?;
            match k {
                "body" => body_fp = Some(v.to_string()),
                "hand" => hand_fp = (v != "-").then(|| v.to_string()),
                "frames" => {
                    frames = Some(
                        v.parse::<usize>()
                            .map_err(|_| Error::parse(1, format!("bad frame count {v:?}")))?,
                    )
                }
                _ => return Err(Error::parse(1, format!("unknown header field {k:?}"))),
            }
        }
        let body_fp = body_fp.ok_or_else(|| Error::parse(1, "header lacks body fingerprint"))?;
        let mut body = Vec::new();
        let mut hand = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (b, h) = line
                .split_once('|')
                .ok_or_else(|| Error::parse(i + 1, "token line lacks '|'"))?;
            let parse = |s: &str| -> Result<Vec<u32>> {
                s.split_whitespace()
                    .map(|x| {
                        x.parse::<u32>()
                            .map_err(|_| Error::parse(i + 1, format!("bad token {x:?}")))
                    })
                    .collect()
            };
            body.push(parse(b)?);
            let hv = parse(h)?;
            if hand_fp.is_some() == hv.is_empty() {
                return Err(Error::parse(i + 1, "hand tokens disagree with header"));
            }
            hand.push(hv);
        }
        Ok(TokenSeq {
            body: TokenGrid {
                part: BodyPart::Body,
                fingerprint: Fingerprint(body_fp),
                frames: body,
                source_frames: frames,
            },
            hand: hand_fp.map(|fp| TokenGrid {
                part: BodyPart::Hand,
                fingerprint: Fingerprint(fp),
                frames: hand,
                source_frames: frames,
            }),
        })
    }
}
