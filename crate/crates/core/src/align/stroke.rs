use serde::{Deserialize, Serialize};

use crate::audio::TokenRate;
use crate::codec::{GestureCodec, TokenSeq};
use crate::index::{GestureRecord, StrokeSpan};
use crate::motion::{to_frame_matrix, MotionClip};
use crate::{Error, Result};

/// Token frames in a one-second stroke, rounded.
pub fn stroke_tokens(rate: TokenRate) -> usize {
    ((rate.fps / rate.downsample as f64).round() as usize).max(1)
}

/// A gesture's stroke as codec tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeSegment {
    pub identifier: String,
    pub label: String,
    pub clip: String,
    /// Source frames `[start, end)`, before any padding.
    pub start: usize,
    pub end: usize,
    pub padded: bool,
    pub tokens: TokenSeq,
}

/// Mean frame-to-frame speed of the pose vector over `[start, start + len)`,
/// per second.
pub fn window_speed(speeds: &[f64], start: usize, len: usize) -> f64 {
    if len < 2 {
        return 0.0;
    }
    speeds[start + 1..start + len].iter().sum::<f64>() / (len - 1) as f64
}

fn frame_speeds(clip: &MotionClip) -> Vec<f64> {
    let m = to_frame_matrix(clip);
    let mut out = vec![0.0; m.rows()];
    for f in 1..m.rows() {
        out[f] = (m.values.row(f) - m.values.row(f - 1)).norm() * clip.fps;
    }
    out
}

/// Source frames `[start, end)` for a `len`-frame stroke. An annotated span
/// is used as given; otherwise the window with the highest mean speed,
/// earliest on ties. The window is shorter than `len` only when the clip is.
pub fn stroke_window(clip: &MotionClip, span: Option<StrokeSpan>, len: usize) -> (usize, usize) {
    let n = clip.frame_count();
    if let Some(s) = span {
        let a = ((s.start * clip.fps).round() as usize).min(n);
        let b = ((s.end * clip.fps).round() as usize).clamp(a, n);
        if b - a > len {
            let trim = (b - a - len) / 2;
            return (a + trim, a + trim + len);
        }
        return (a, b);
    }
    if n <= len {
        return (0, n);
    }
    let speeds = frame_speeds(clip);
    let mut best = (0, f64::NEG_INFINITY);
    for start in 0..=n - len {
        let v = window_speed(&speeds, start, len);
        if v > best.1 {
            best = (start, v);
        }
    }
    (best.0, best.0 + len)
}

/// Stroke of the `clip_index`th clip of `record`, encoded to the stroke
/// length. Short windows are padded by repeating their last frame.
pub fn extract_stroke(
    record: &GestureRecord,
    clip_index: usize,
    clip: &MotionClip,
    codec: &GestureCodec,
) -> Result<StrokeSegment> {
    let name = record
        .motion_clips
        .get(clip_index)
        .ok_or_else(|| Error::OutOfRange(format!("{} has no clip {clip_index}", record.label)))?;
    if clip.frame_count() == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let rate = TokenRate {
        fps: codec.fps(),
        downsample: codec.downsample(),
    };
    let s = stroke_tokens(rate);
    let frames = s * rate.downsample;
    let span = record.stroke_for(clip_index);
    if span.is_none() && clip.duration() < 1.0 {
        log::warn!(
            "{} clip {name} lasts {:.2}s, padding the stroke to one second",
            record.label,
            clip.duration()
        );
    }
    let (start, end) = stroke_window(clip, span, frames);
    let mut window = clip.slice(start, end);
    if window.frame_count() == 0 {
        // Annotation past the end of the clip: hold the last pose.
        window = clip.slice(clip.frame_count() - 1, clip.frame_count());
    }
    let padded = window.frame_count() < frames;
    while window.frame_count() < frames {
        let last = window.frame_count() - 1;
        window.root_translations.push(window.root_translations[last]);
        window.rotations.push(window.rotations[last].clone());
    }
    let mut tokens = codec.encode(&window)?;
    tokens.body.source_frames = None;
    if let Some(h) = tokens.hand.as_mut() {
        h.source_frames = None;
    }
    debug_assert_eq!(tokens.len(), s);
    Ok(StrokeSegment {
        identifier: record.identifier.clone(),
        label: record.label.clone(),
        clip: name.clone(),
        start,
        end,
        padded,
        tokens,
    })
}
