//! Beat-aligned placement and latent blending of retrieved gestures.

mod stroke;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use stroke::{extract_stroke, stroke_tokens, stroke_window, window_speed, StrokeSegment};

use crate::audio::{build_feature_stack, AudioBuffer, FeatureConfig, TokenRate};
use crate::codec::{GestureCodec, LatentSeq, TokenSeq};
use crate::generator::{sample_sequence, GeneratorModel};
use crate::motion::MotionClip;
use crate::retrieval::{trigger_midpoint, Annotation, TimedTranscript};
use crate::{Error, Result};

/// Nearest beat to `t`; ties go to the earlier beat. No beats means `t`.
pub fn merge_timing(t: f64, beats: &[f64]) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for &b in beats {
        let d = (b - t).abs();
        best = match best {
            Some((bd, bb)) if bd < d || (bd == d && bb <= b) => Some((bd, bb)),
            _ => Some((d, b)),
        };
    }
    match best {
        Some((_, b)) => b,
        None => {
            log::info!("no beats detected, merging at the trigger time {t:.3}s");
            t
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RampConfig {
    pub w_low: f64,
    pub w_high: f64,
    /// Transition length on each side of a core interval, token frames.
    pub transition: usize,
}

impl Default for RampConfig {
    fn default() -> Self {
        RampConfig {
            w_low: 0.3,
            w_high: 0.7,
            transition: 4,
        }
    }
}

impl RampConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.w_low && self.w_low <= self.w_high && self.w_high <= 1.0) {
            return Err(Error::Config(format!(
                "ramp weights must satisfy 0 <= {} <= {} <= 1",
                self.w_low, self.w_high
            )));
        }
        Ok(())
    }

    /// Ramp parameter of the `k`th transition frame, rising from 0 to 1.
    pub fn ramp_t(&self, k: usize) -> f64 {
        if self.transition <= 1 {
            0.5
        } else {
            k as f64 / (self.transition - 1) as f64
        }
    }
}

/// `(w_s, w_r)` on the rising half-cosine at `t` in `[0, 1]`.
pub fn blend_weights(ramp: &RampConfig, t: f64) -> (f64, f64) {
    let t = t.clamp(0.0, 1.0);
    let ws = ramp.w_low + (ramp.w_high - ramp.w_low) * (1.0 - (std::f64::consts::PI * t).cos()) / 2.0;
    (ws, 1.0 - ws)
}

/// One retrieved gesture placed on the token timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub identifier: String,
    pub label: String,
    /// Trigger word index and its midpoint, seconds.
    pub word: usize,
    pub trigger: f64,
    /// Merge timing, seconds.
    pub timing: f64,
    /// Token frame of `timing`.
    pub anchor: usize,
    /// Core interval `[start, end)` in token frames.
    pub start: usize,
    pub end: usize,
    pub clamped: bool,
    /// Set when an earlier gesture's core overlaps this one.
    #[serde(default)]
    pub dropped: bool,
}

impl PlanEntry {
    fn overlaps(&self, other: &PlanEntry) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Core interval for a gesture merged at `timing`: the anchor token lands
/// `floor(3S/4)` frames into the segment, clamped into the sequence.
pub fn plan_placement(timing: f64, stroke_len: usize, len: usize, rate: TokenRate) -> Result<(usize, usize, usize, bool)> {
    if len < stroke_len {
        return Err(Error::TooShort {
            needed: stroke_len,
            got: len,
        });
    }
    let anchor = rate.token_at(timing.max(0.0));
    let want = anchor as i64 - (3 * stroke_len / 4) as i64;
    let start = want.clamp(0, (len - stroke_len) as i64) as usize;
    Ok((anchor, start, start + stroke_len, start as i64 != want))
}

/// Mark every plan whose core meets the core of an earlier-triggered kept
/// plan as dropped. Order of the result follows the trigger order.
pub fn resolve_overlaps(mut plans: Vec<PlanEntry>) -> Vec<PlanEntry> {
    plans.sort_by(|a, b| {
        a.trigger
            .total_cmp(&b.trigger)
            .then(a.word.cmp(&b.word))
            .then(a.start.cmp(&b.start))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..plans.len() {
        if plans[i].dropped || kept.iter().any(|&k| plans[k].overlaps(&plans[i])) {
            plans[i].dropped = true;
        } else {
            kept.push(i);
        }
    }
    plans
}

/// Placement of every retrieved gesture, with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergePlan {
    pub config_hash: String,
    pub fps: f64,
    pub downsample: usize,
    /// Token frames in the generated sequence.
    pub tokens: usize,
    pub stroke_tokens: usize,
    pub ramp: RampConfig,
    pub entries: Vec<PlanEntry>,
}

impl MergePlan {
    pub fn kept(&self) -> impl Iterator<Item = &PlanEntry> {
        self.entries.iter().filter(|e| !e.dropped)
    }

    pub fn validate(&self) -> Result<()> {
        self.ramp.validate()?;
        for e in &self.entries {
            if e.end > self.tokens || e.end - e.start.min(e.end) != self.stroke_tokens {
                return Err(Error::Config(format!(
                    "{} has interval [{}, {}) in a {}-frame sequence with {}-frame strokes",
                    e.label, e.start, e.end, self.tokens, self.stroke_tokens
                )));
            }
        }
        let kept: Vec<&PlanEntry> = self.kept().collect();
        for (i, a) in kept.iter().enumerate() {
            if let Some(b) = kept[i + 1..].iter().find(|b| a.overlaps(b)) {
                return Err(Error::Config(format!("{} and {} overlap", a.label, b.label)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let plan: MergePlan = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        plan.validate()?;
        Ok(plan)
    }

    /// Frames touched by a kept plan, cores and transitions.
    pub fn mask(&self) -> Vec<bool> {
        frame_weights(self, self.tokens).iter().map(Option::is_some).collect()
    }
}

/// Plans for `annotations`, resolved for overlap.
#[allow(clippy::too_many_arguments)]
pub fn build_plan(
    transcript: &TimedTranscript,
    annotations: &[Annotation],
    beats: &[f64],
    len: usize,
    rate: TokenRate,
    ramp: RampConfig,
    config_hash: &str,
) -> Result<MergePlan> {
    ramp.validate()?;
    let s = stroke_tokens(rate);
    let mut entries = Vec::with_capacity(annotations.len());
    for a in annotations {
        let trigger = trigger_midpoint(transcript, a.word)?;
        let timing = merge_timing(trigger, beats);
        let (anchor, start, end, clamped) = plan_placement(timing, s, len, rate)?;
        entries.push(PlanEntry {
            identifier: a.identifier.clone(),
            label: a.label.clone(),
            word: a.word,
            trigger,
            timing,
            anchor,
            start,
            end,
            clamped,
            dropped: false,
        });
    }
    let entries = resolve_overlaps(entries);
    for e in entries.iter().filter(|e| e.dropped) {
        log::warn!("dropping {} at word {}: overlaps an earlier gesture", e.label, e.word);
    }
    Ok(MergePlan {
        config_hash: config_hash.to_string(),
        fps: rate.fps,
        downsample: rate.downsample,
        tokens: len,
        stroke_tokens: s,
        ramp,
        entries,
    })
}

/// Which stroke frame a sequence frame reads and with what weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameBlend {
    /// Index into the plan's entries.
    pub entry: usize,
    /// Frame of the stroke segment supplying the semantic latent.
    pub stroke_frame: usize,
    pub w_s: f64,
}

/// Per-frame blend for the kept entries. Cores take precedence over
/// transitions; where transitions meet, the larger semantic weight wins,
/// then the earlier entry.
pub fn frame_weights(plan: &MergePlan, len: usize) -> Vec<Option<FrameBlend>> {
    let mut out: Vec<Option<FrameBlend>> = vec![None; len];
    let ramp = &plan.ramp;
    let t = ramp.transition;
    let offer = |f: usize, b: FrameBlend, out: &mut Vec<Option<FrameBlend>>| {
        if f >= len {
            return;
        }
        match out[f] {
            Some(cur) if cur.w_s >= b.w_s => {}
            _ => out[f] = Some(b),
        }
    };
    for (i, e) in plan.entries.iter().enumerate().filter(|(_, e)| !e.dropped) {
        let s = e.end - e.start;
        for k in 0..s {
            offer(e.start + k, FrameBlend { entry: i, stroke_frame: k, w_s: 1.0 }, &mut out);
        }
        for k in 0..t {
            let (w_s, _) = blend_weights(ramp, ramp.ramp_t(k));
            // Left transition rises toward the core.
            if let Some(f) = (e.start + k).checked_sub(t) {
                offer(f, FrameBlend { entry: i, stroke_frame: 0, w_s }, &mut out);
            }
            // Right transition mirrors it.
            let (w_s, _) = blend_weights(ramp, ramp.ramp_t(t - 1 - k));
            offer(e.end + k, FrameBlend { entry: i, stroke_frame: s - 1, w_s }, &mut out);
        }
    }
    out
}

/// Base latents with the strokes blended in. Frames outside every kept
/// plan are copied unchanged.
pub fn merge_latents(
    base: &TokenSeq,
    plan: &MergePlan,
    strokes: &BTreeMap<String, StrokeSegment>,
    codec: &GestureCodec,
) -> Result<(LatentSeq, Option<LatentSeq>)> {
    plan.validate()?;
    let (mut body, mut hand) = codec.token_latents(base)?;
    if body.len() != plan.tokens {
        return Err(Error::Alignment(format!(
            "plan covers {} token frames, sequence has {}",
            plan.tokens,
            body.len()
        )));
    }
    let mut sem: Vec<(LatentSeq, Option<LatentSeq>)> = Vec::with_capacity(plan.entries.len());
    for e in &plan.entries {
        if e.dropped {
            sem.push((body.clone(), hand.clone()));
            continue;
        }
        let s = strokes.get(&e.identifier).ok_or_else(|| Error::NotFound {
            key: e.identifier.clone(),
            suggestions: Vec::new(),
        })?;
        if s.tokens.len() != plan.stroke_tokens {
            return Err(Error::DimensionMismatch {
                expected: plan.stroke_tokens,
                got: s.tokens.len(),
            });
        }
        sem.push(codec.token_latents(&s.tokens)?);
    }
    for (f, b) in frame_weights(plan, body.len()).into_iter().enumerate() {
        let Some(b) = b else { continue };
        let w_r = 1.0 - b.w_s;
        let (sb, sh) = &sem[b.entry];
        blend_row(&mut body, sb, f, b.stroke_frame, b.w_s, w_r);
        if let (Some(h), Some(sh)) = (hand.as_mut(), sh) {
            blend_row(h, sh, f, b.stroke_frame, b.w_s, w_r);
        }
    }
    Ok((body, hand))
}

fn blend_row(out: &mut LatentSeq, sem: &LatentSeq, f: usize, sf: usize, w_s: f64, w_r: f64) {
    for c in 0..out.values.ncols() {
        out.values[(f, c)] = w_s * sem.values[(sf, c)] + w_r * out.values[(f, c)];
    }
}

/// Base tokens with each kept core interval overwritten by its stroke.
pub fn splice_strokes(
    base: &TokenSeq,
    plan: &MergePlan,
    strokes: &BTreeMap<String, StrokeSegment>,
) -> Result<TokenSeq> {
    plan.validate()?;
    let mut out = base.clone();
    for e in plan.kept() {
        let s = strokes.get(&e.identifier).ok_or_else(|| Error::NotFound {
            key: e.identifier.clone(),
            suggestions: Vec::new(),
        })?;
        if s.tokens.body.fingerprint != base.body.fingerprint {
            return Err(Error::StaleTokens {
                artifact: format!("stroke of {}", s.label),
                expected: base.body.fingerprint.0.clone(),
                found: s.tokens.body.fingerprint.0.clone(),
            });
        }
        for k in 0..(e.end - e.start).min(s.tokens.len()) {
            out.body.frames[e.start + k] = s.tokens.body.frames[k].clone();
            if let (Some(h), Some(sh)) = (out.hand.as_mut(), s.tokens.hand.as_ref()) {
                h.frames[e.start + k] = sh.frames[k].clone();
            }
        }
    }
    Ok(out)
}

/// First-clip stroke of every record, keyed by identifier. Clip paths are
/// relative to `dir`.
pub fn load_strokes(
    records: &[crate::index::GestureRecord],
    dir: &std::path::Path,
    codec: &GestureCodec,
) -> Result<BTreeMap<String, StrokeSegment>> {
    let mut out = BTreeMap::new();
    for r in records {
        let path = dir.join(&r.motion_clips[0]);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!("cannot read {} for {}: {e}", path.display(), r.label))
        })?;
        let (_, clip) = crate::motion::parse_bvh(&text, codec.body.layout.param)?;
        out.insert(r.identifier.clone(), extract_stroke(r, 0, &clip, codec)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub top_k: usize,
    pub seed: u64,
    pub ramp: RampConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            top_k: 8,
            seed: 0,
            ramp: RampConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub tokens: TokenSeq,
    pub plan: MergePlan,
    /// Decoded generator output without any gesture merged in.
    pub baseline: MotionClip,
    pub motion: MotionClip,
    pub latents: (LatentSeq, Option<LatentSeq>),
}

/// Generated rhythm tokens for `audio`, decoded, with `annotations` merged
/// at the nearest beats. Deterministic for a fixed seed.
#[allow(clippy::too_many_arguments)]
pub fn synthesize(
    audio: &AudioBuffer,
    transcript: &TimedTranscript,
    annotations: &[Annotation],
    strokes: &BTreeMap<String, StrokeSegment>,
    codec: &GestureCodec,
    generator: &dyn GeneratorModel,
    features: &FeatureConfig,
    cfg: &SynthesisConfig,
) -> Result<Synthesis> {
    generator.vocab().check(&empty_tokens(codec))?;
    let rate = TokenRate {
        fps: codec.fps(),
        downsample: codec.downsample(),
    };
    let track = build_feature_stack(audio, rate, None, features)?;
    let len = track.frame_count() - 1;
    let tokens = sample_sequence(generator, &track.stacked(), len, cfg.top_k, cfg.seed)?;
    let plan = build_plan(transcript, annotations, &track.beats, len, rate, cfg.ramp, &codec.config_hash)?;
    render_plan(tokens, plan, strokes, codec)
}

/// Decode `tokens` with the gestures of `plan` merged in.
pub fn render_plan(
    tokens: TokenSeq,
    plan: MergePlan,
    strokes: &BTreeMap<String, StrokeSegment>,
    codec: &GestureCodec,
) -> Result<Synthesis> {
    let (bb, bh) = codec.token_latents(&tokens)?;
    let baseline = codec.decode_latents(&bb, bh.as_ref())?;
    let latents = merge_latents(&tokens, &plan, strokes, codec)?;
    let motion = codec.decode_latents(&latents.0, latents.1.as_ref())?;
    Ok(Synthesis {
        tokens,
        plan,
        baseline,
        motion,
        latents,
    })
}

fn empty_tokens(codec: &GestureCodec) -> TokenSeq {
    let grid = |c: &crate::codec::RvqCodec| crate::codec::TokenGrid {
        part: c.part,
        fingerprint: c.fingerprint.clone(),
        frames: Vec::new(),
        source_frames: None,
    };
    TokenSeq {
        body: grid(&codec.body),
        hand: codec.hand.as_ref().map(grid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATE: TokenRate = TokenRate {
        fps: 60.0,
        downsample: 8,
    };

    #[test]
    fn timing_examples() {
        assert_eq!(merge_timing(1.2, &[0.5, 1.0, 1.5]), 1.0);
        assert_eq!(merge_timing(1.0, &[0.5, 1.0, 1.5]), 1.0);
        assert_eq!(merge_timing(1.2, &[]), 1.2);
        // Equidistant: the earlier beat, whatever the list order.
        assert_eq!(merge_timing(1.25, &[1.5, 1.0]), 1.0);
    }

    #[test]
    fn placement_examples() {
        let at = |tok: usize| (tok as f64 + 0.5) * RATE.token_hop();
        assert_eq!(plan_placement(at(30), 8, 100, RATE).unwrap(), (30, 24, 32, false));
        assert_eq!(plan_placement(at(2), 8, 100, RATE).unwrap(), (2, 0, 8, true));
        assert_eq!(plan_placement(at(99), 8, 100, RATE).unwrap(), (99, 92, 100, true));
        assert!(matches!(plan_placement(0.0, 8, 7, RATE), Err(Error::TooShort { .. })));
    }

    #[test]
    fn weights_at_ramp_points() {
        let r = RampConfig::default();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(blend_weights(&r, 0.0).0, 0.3));
        assert!(close(blend_weights(&r, 0.5).0, 0.5));
        assert!(close(blend_weights(&r, 1.0).0, 0.7));
        for i in 0..=100 {
            let (s, w) = blend_weights(&r, i as f64 / 100.0);
            assert_eq!(s + w, 1.0);
        }
    }

    fn entry(trigger: f64, start: usize) -> PlanEntry {
        PlanEntry {
            identifier: "1".into(),
            label: format!("G{start}"),
            word: 0,
            trigger,
            timing: trigger,
            anchor: start + 6,
            start,
            end: start + 8,
            clamped: false,
            dropped: false,
        }
    }

    #[test]
    fn overlaps_resolved_earliest_first() {
        let disjoint = resolve_overlaps(vec![entry(1.0, 0), entry(2.0, 8)]);
        assert!(disjoint.iter().all(|e| !e.dropped));
        let same = resolve_overlaps(vec![entry(1.0, 4), entry(1.0, 4)]);
        assert_eq!(same.iter().filter(|e| !e.dropped).count(), 1);
        // a-b and b-c overlap, a-c do not; b goes, then c is judged against a only.
        let chain = resolve_overlaps(vec![entry(3.0, 12), entry(1.0, 0), entry(2.0, 6)]);
        let dropped: Vec<bool> = chain.iter().map(|e| e.dropped).collect();
        assert_eq!(dropped, vec![false, true, false]);
        let tight = resolve_overlaps(vec![entry(1.0, 0), entry(2.0, 4), entry(3.0, 7)]);
        let dropped: Vec<bool> = tight.iter().map(|e| e.dropped).collect();
        assert_eq!(dropped, vec![false, true, true]);
    }

    #[test]
    fn frame_weights_shape() {
        let plan = MergePlan {
            config_hash: String::new(),
            fps: 60.0,
            downsample: 8,
            tokens: 30,
            stroke_tokens: 8,
            ramp: RampConfig::default(),
            entries: vec![entry(1.0, 10)],
        };
        let w = frame_weights(&plan, 30);
        assert!(w[..6].iter().all(Option::is_none));
        let left: Vec<f64> = (6..10).map(|f| w[f].unwrap().w_s).collect();
        assert!((left[0] - 0.3).abs() < 1e-12 && (left[3] - 0.7).abs() < 1e-12);
        assert!((10..18).all(|f| w[f].unwrap().w_s == 1.0));
        let right: Vec<f64> = (18..22).map(|f| w[f].unwrap().w_s).collect();
        assert!((right[0] - 0.7).abs() < 1e-12 && (right[3] - 0.3).abs() < 1e-12);
        assert!(w[22..].iter().all(Option::is_none));
        assert_eq!(w[19].unwrap().stroke_frame, 7);
    }

    #[test]
    fn plan_json_round_trip() {
        let plan = MergePlan {
            config_hash: "abc".into(),
            fps: 60.0,
            downsample: 8,
            tokens: 30,
            stroke_tokens: 8,
            ramp: RampConfig::default(),
            entries: resolve_overlaps(vec![entry(1.0, 0), entry(2.0, 4)]),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.json");
        plan.save(&p).unwrap();
        assert_eq!(MergePlan::load(&p).unwrap(), plan);
    }
}
