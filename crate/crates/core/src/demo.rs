//! Deterministic synthetic fixtures: a 25-joint skeleton, a small gesture
//! library, click-track speech stand-ins and paired training motion.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioBuffer};
use crate::index::{GestureRecord, StrokeSpan};
use crate::motion::{write_bvh, MotionClip, RotationParam, Skeleton};
use crate::retrieval::{TimedTranscript, TimedWord};
use crate::Result;

pub const FPS: f64 = 60.0;
pub const SAMPLE_RATE: u32 = 16_000;

const JOINTS: [(&str, i32, [f64; 3]); 25] = [
    ("Hips", -1, [0.0, 0.95, 0.0]),
    ("Spine", 0, [0.0, 0.1, 0.0]),
    ("Spine1", 1, [0.0, 0.1, 0.0]),
    ("Spine2", 2, [0.0, 0.1, 0.0]),
    ("Spine3", 3, [0.0, 0.1, 0.0]),
    ("Neck", 4, [0.0, 0.12, 0.0]),
    ("Head", 5, [0.0, 0.1, 0.0]),
    ("LeftShoulder", 4, [0.05, 0.08, 0.0]),
    ("LeftArm", 7, [0.12, 0.0, 0.0]),
    ("LeftForeArm", 8, [0.28, 0.0, 0.0]),
    ("LeftHand", 9, [0.25, 0.0, 0.0]),
    ("LeftHandThumb1", 10, [0.03, 0.0, 0.03]),
    ("LeftHandIndex1", 10, [0.09, 0.0, 0.02]),
    ("LeftHandMiddle1", 10, [0.09, 0.0, 0.0]),
    ("LeftHandRing1", 10, [0.085, 0.0, -0.015]),
    ("LeftHandPinky1", 10, [0.075, 0.0, -0.03]),
    ("RightShoulder", 4, [-0.05, 0.08, 0.0]),
    ("RightArm", 16, [-0.12, 0.0, 0.0]),
    ("RightForeArm", 17, [-0.28, 0.0, 0.0]),
    ("RightHand", 18, [-0.25, 0.0, 0.0]),
    ("RightHandThumb1", 19, [-0.03, 0.0, 0.03]),
    ("RightHandIndex1", 19, [-0.09, 0.0, 0.02]),
    ("RightHandMiddle1", 19, [-0.09, 0.0, 0.0]),
    ("RightHandRing1", 19, [-0.085, 0.0, -0.015]),
    ("RightHandPinky1", 19, [-0.075, 0.0, -0.03]),
];

const L_ARM: usize = 8;
const L_FORE: usize = 9;
const L_HAND: usize = 10;
const R_ARM: usize = 17;
const R_FORE: usize = 18;
const R_HAND: usize = 19;
const HEAD: usize = 6;
const SPINE2: usize = 3;

pub fn skeleton() -> Skeleton {
    let names: Vec<&str> = JOINTS.iter().map(|j| j.0).collect();
    let parents: Vec<i32> = JOINTS.iter().map(|j| j.1).collect();
    let offsets: Vec<[f64; 3]> = JOINTS.iter().map(|j| j.2).collect();
    Skeleton::from_parents(&names, &parents, &offsets).expect("fixture skeleton is valid")
}

struct Entry {
    label: &'static str,
    description: &'static str,
    meaning: &'static str,
    examples: [&'static str; 2],
}

const LIBRARY: [Entry; 20] = [
    Entry { label: "WAVE", description: "hand waves side to side", meaning: "greeting someone", examples: ["hello everyone nice to see you", "hi there welcome back"] },
    Entry { label: "ARMS RAISE", description: "both arms lift high above the head", meaning: "growth or increase", examples: ["prices went up sharply", "sales keep rising every year"] },
    Entry { label: "SHRUG", description: "shoulders lift with open palms", meaning: "uncertainty", examples: ["honestly nobody knows", "I am not sure about that"] },
    Entry { label: "POINT SELF", description: "index finger points at the chest", meaning: "referring to oneself", examples: ["this is my idea", "I did it myself"] },
    Entry { label: "POINT FORWARD", description: "arm extends pointing ahead", meaning: "indicating the listener or a direction", examples: ["you should look over there", "it is right in front of you"] },
    Entry { label: "HEAD NOD", description: "head tilts down and up", meaning: "agreement", examples: ["yes exactly right", "I completely agree with you"] },
    Entry { label: "HEAD SHAKE", description: "head turns left and right", meaning: "disagreement or negation", examples: ["no that is wrong", "absolutely not"] },
    Entry { label: "ARMS WIDE", description: "arms spread apart wide", meaning: "something large or everything", examples: ["the whole world", "a huge amount of data"] },
    Entry { label: "HANDS CLOSE", description: "palms move close together", meaning: "something small or precise", examples: ["just a tiny bit", "a very small detail"] },
    Entry { label: "COUNT ONE", description: "one finger held up", meaning: "first item in a list", examples: ["first of all", "number one priority"] },
    Entry { label: "STOP", description: "palm pushes forward", meaning: "halt or refusal", examples: ["wait stop right there", "please hold on"] },
    Entry { label: "THINK", description: "hand touches the temple", meaning: "reflection or thinking", examples: ["let me think about it", "I wonder why"] },
    Entry { label: "CIRCLE", description: "hand draws a circle", meaning: "cycle or repetition", examples: ["it goes round and round", "again and again"] },
    Entry { label: "CHOP", description: "flat hand chops downward", meaning: "decisiveness or division", examples: ["we must decide now", "split it in half"] },
    Entry { label: "BECKON", description: "fingers curl inward repeatedly", meaning: "invitation to come closer", examples: ["come over here", "join us today"] },
    Entry { label: "FIST", description: "hand clenches into a fist", meaning: "strength or determination", examples: ["we will fight for it", "stay strong"] },
    Entry { label: "SWEEP", description: "arm sweeps horizontally", meaning: "dismissal or covering everything", examples: ["forget about all that", "across the entire region"] },
    Entry { label: "HEART", description: "hand placed over the heart", meaning: "sincerity or love", examples: ["I truly love this", "from the bottom of my heart"] },
    Entry { label: "THUMBS UP", description: "thumb raised with closed fist", meaning: "approval", examples: ["great job team", "that works well"] },
    Entry { label: "CLAP", description: "hands come together sharply", meaning: "celebration or emphasis", examples: ["congratulations to everyone", "what a fantastic result"] },
];

fn clip_name(label: &str) -> String {
    format!("{}.bvh", label.to_lowercase().replace(' ', "_"))
}

/// Library records; even-numbered ones carry an annotated stroke.
pub fn library() -> Vec<GestureRecord> {
    LIBRARY
        .iter()
        .enumerate()
        .map(|(i, e)| GestureRecord {
            identifier: String::new(),
            label: e.label.into(),
            description: e.description.into(),
            contextual_meaning: e.meaning.into(),
            example_sentences: e.examples.iter().map(|s| s.to_string()).collect(),
            motion_clips: vec![clip_name(e.label)],
            stroke: if i % 2 == 0 {
                vec![Some(StrokeSpan { start: 1.0, end: 2.0 })]
            } else {
                vec![]
            },
        })
        .collect()
}

/// Axis-angle targets of one gesture, per joint.
fn gesture_pose(g: usize) -> Vec<(usize, [f64; 3])> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + g as u64);
    let mut v = |scale: f64| -> [f64; 3] {
        [
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        ]
    };
    let mut pose = Vec::new();
    let side = g % 3;
    if side != 1 {
        pose.push((L_ARM, v(1.1)));
        pose.push((L_FORE, v(0.9)));
        pose.push((L_HAND, v(0.5)));
        for f in 11..16 {
            pose.push((f, v(0.8)));
        }
    }
    if side != 0 {
        pose.push((R_ARM, v(1.1)));
        pose.push((R_FORE, v(0.9)));
        pose.push((R_HAND, v(0.5)));
        for f in 20..25 {
            pose.push((f, v(0.8)));
        }
    }
    pose.push((HEAD, v(0.35)));
    pose.push((SPINE2, v(0.15)));
    pose
}

fn add(clip: &mut MotionClip, frame: usize, joint: usize, r: [f64; 3], w: f64) {
    for a in 0..3 {
        clip.rotations[frame][joint * 3 + a] += w * r[a];
    }
}

fn idle(clip: &mut MotionClip, phase: f64) {
    for f in 0..clip.frame_count() {
        let t = f as f64 / clip.fps;
        let s = (2.0 * PI * 0.25 * t + phase).sin();
        add(clip, f, SPINE2, [0.02 * s, 0.03 * s, 0.0], 1.0);
        add(clip, f, HEAD, [0.03 * s, 0.0, 0.02 * s], 1.0);
        add(clip, f, L_ARM, [0.0, 0.0, -1.2], 1.0);
        add(clip, f, R_ARM, [0.0, 0.0, 1.2], 1.0);
        clip.root_translations[f] = [0.01 * s, 0.95, 0.0];
    }
}

/// Gesture `g` with its stroke centred at `center` seconds.
fn stamp_gesture(clip: &mut MotionClip, g: usize, center: f64, width: f64) {
    let pose = gesture_pose(g);
    let wobble = 1.5 + (g % 5) as f64 * 0.7;
    for f in 0..clip.frame_count() {
        let t = f as f64 / clip.fps;
        let e = (-((t - center) / width).powi(2)).exp();
        if e < 1e-4 {
            continue;
        }
        let w = e * (1.0 + 0.3 * (2.0 * PI * wobble * t).sin());
        for &(j, r) in &pose {
            add(clip, f, j, r, w);
        }
    }
}

/// Three-second clip of library gesture `g`, stroke around 1.5 s.
pub fn gesture_clip(g: usize) -> MotionClip {
    let mut c = MotionClip::rest(JOINTS.len(), (3.0 * FPS) as usize, FPS, RotationParam::ExpMap3);
    idle(&mut c, g as f64);
    stamp_gesture(&mut c, g, 1.5, 0.35);
    c
}

/// Click-track speech stand-in: a decaying noise burst on every beat over a
/// voiced hum with syllable-rate modulation.
pub fn speech_audio(seconds: f64, bpm: f64, seed: u64) -> AudioBuffer {
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let sr = SAMPLE_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = vec![0.0; n];
    let pitch = 120.0 + (seed % 7) as f64 * 10.0;
    for (i, x) in s.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let syll = 0.5 + 0.5 * (2.0 * PI * 4.0 * t).sin();
        let hum: f64 = (1..=4).map(|h| (2.0 * PI * pitch * h as f64 * t).sin() / h as f64).sum();
        *x = 0.08 * syll * hum + 0.005 * (rng.random::<f64>() - 0.5);
    }
    for b in beat_times(seconds, bpm) {
        let start = (b * sr) as usize;
        for k in 0..(0.03 * sr) as usize {
            if start + k < n {
                let decay = (-(k as f64) / (0.006 * sr)).exp();
                s[start + k] += 0.7 * decay * (rng.random::<f64>() * 2.0 - 1.0);
            }
        }
    }
    AudioBuffer::new(s, SAMPLE_RATE).expect("fixture audio is valid")
}

pub fn beat_times(seconds: f64, bpm: f64) -> Vec<f64> {
    let period = 60.0 / bpm;
    (0..)
        .map(|k| 0.25 + k as f64 * period)
        .take_while(|&t| t < seconds - 0.05)
        .collect()
}

/// Beat-driven motion matching `speech_audio(seconds, bpm, seed)`, with a
/// few library gestures mixed in.
pub fn training_motion(seconds: f64, bpm: f64, seed: u64) -> MotionClip {
    let frames = (seconds * FPS) as usize;
    let mut c = MotionClip::rest(JOINTS.len(), frames, FPS, RotationParam::ExpMap3);
    idle(&mut c, seed as f64);
    let beats = beat_times(seconds, bpm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let swing_l = [rng.random_range(0.2..0.5), 0.0, rng.random_range(0.1..0.3)];
    let swing_r = [rng.random_range(0.2..0.5), 0.0, -rng.random_range(0.1..0.3)];
    for f in 0..frames {
        let t = f as f64 / FPS;
        let pulse: f64 = beats.iter().map(|b| (-((t - b) / 0.09).powi(2)).exp()).sum();
        add(&mut c, f, L_FORE, swing_l, pulse);
        add(&mut c, f, R_FORE, swing_r, pulse);
        add(&mut c, f, HEAD, [0.08, 0.0, 0.0], pulse);
        for j in (11..16).chain(20..25) {
            add(&mut c, f, j, [0.0, 0.0, 0.25], pulse);
        }
    }
    let mut t = 2.0;
    while t < seconds - 1.5 {
        stamp_gesture(&mut c, rng.random_range(0..LIBRARY.len()), t, 0.35);
        t += rng.random_range(3.0..5.0);
    }
    c
}

/// The bundled ten-second transcript.
pub fn demo_transcript() -> TimedTranscript {
    let sentences: [&str; 3] = [
        "hello everyone nice to see you",
        "this year prices went up sharply and honestly nobody knows why",
        "let me think about it",
    ];
    timed(&sentences, 0.3)
}

fn timed(sentences: &[&str], lead: f64) -> TimedTranscript {
    let mut words = Vec::new();
    let mut starts = Vec::new();
    let mut t = lead;
    for s in sentences {
        starts.push(words.len());
        for w in s.split_whitespace() {
            words.push(TimedWord {
                w: w.into(),
                start: t,
                end: t + 0.28,
            });
            t += 0.36;
        }
        t += 0.3;
    }
    TimedTranscript {
        words,
        sentences: starts,
    }
}

/// A transcript with gold gestures, by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedItem {
    pub transcript: TimedTranscript,
    pub gold: Vec<GoldTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldTag {
    pub word: usize,
    pub label: String,
}

pub fn annotated_fixture() -> Vec<AnnotatedItem> {
    let gold = |pairs: &[(usize, &str)]| {
        pairs
            .iter()
            .map(|&(word, label)| GoldTag {
                word,
                label: label.into(),
            })
            .collect()
    };
    vec![
        AnnotatedItem {
            transcript: demo_transcript(),
            gold: gold(&[(0, "WAVE"), (10, "ARMS RAISE"), (15, "SHRUG"), (19, "THINK")]),
        },
        AnnotatedItem {
            transcript: timed(&["first of all we must decide now", "I truly love this and it works well"], 0.2),
            gold: gold(&[(1, "COUNT ONE"), (6, "CHOP"), (9, "HEART"), (13, "THUMBS UP")]),
        },
        AnnotatedItem {
            transcript: timed(&["come over here", "the whole world is watching", "no that is wrong"], 0.2),
            gold: gold(&[(1, "BECKON"), (5, "ARMS WIDE"), (8, "HEAD SHAKE"), (10, "HEAD SHAKE")]),
        },
        AnnotatedItem {
            transcript: timed(&["nothing to see here"], 0.2),
            gold: vec![],
        },
    ]
}

/// Paired training sets: (stem, seconds, bpm, seed).
pub const TRAINING_SET: [(&str, f64, f64, u64); 4] = [
    ("take_a", 12.0, 96.0, 11),
    ("take_b", 12.0, 108.0, 12),
    ("take_c", 12.0, 120.0, 13),
    ("take_d", 12.0, 132.0, 14),
];

pub const DEMO_BPM: f64 = 110.0;
pub const DEMO_SECONDS: f64 = 10.0;

/// Write every fixture under `dir`.
pub fn write_demo(dir: &Path) -> Result<()> {
    let skel = skeleton();
    let lib_dir = dir.join("library");
    std::fs::create_dir_all(&lib_dir)?;
    let records = library();
    for (g, r) in records.iter().enumerate() {
        std::fs::write(lib_dir.join(&r.motion_clips[0]), write_bvh(&skel, &gesture_clip(g))?)?;
    }
    std::fs::write(lib_dir.join("library.json"), serde_json::to_string_pretty(&records)?)?;
    let train_dir = dir.join("train");
    std::fs::create_dir_all(&train_dir)?;
    for (stem, seconds, bpm, seed) in TRAINING_SET {
        write_wav(&train_dir.join(format!("{stem}.wav")), &speech_audio(seconds, bpm, seed))?;
        std::fs::write(
            train_dir.join(format!("{stem}.bvh")),
            write_bvh(&skel, &training_motion(seconds, bpm, seed))?,
        )?;
    }
    write_wav(&dir.join("speech.wav"), &speech_audio(DEMO_SECONDS, DEMO_BPM, 7))?;
    std::fs::write(dir.join("transcript.json"), serde_json::to_string_pretty(&demo_transcript())?)?;
    std::fs::write(dir.join("annotated.json"), serde_json::to_string_pretty(&annotated_fixture())?)?;
    Ok(())
}
