//! BVH text reader and writer.
//!
//! Supported channel sets: the root carries three position and three
//! rotation channels, every other joint carries exactly three rotation
//! channels. Angles are degrees in the file and converted to the requested
//! rotation parameterization on read.

use std::fmt::Write as _;

use super::clip::MotionClip;
use super::rotation::{Axis, EulerOrder, RotationParam};
use super::skeleton::{classify_joint, Skeleton};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    Pos(Axis),
    Rot(Axis),
}

fn parse_channel(name: &str) -> Option<Channel> {
    let axis = match name.chars().next()?.to_ascii_uppercase() {
        'X' => Axis::X,
        'Y' => Axis::Y,
        'Z' => Axis::Z,
        _ => return None,
    };
    match &name[1..] {
        "position" => Some(Channel::Pos(axis)),
        "rotation" => Some(Channel::Rot(axis)),
        _ => None,
    }
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Tokens { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(0, |t| t.0)
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self
            .items
            .get(self.pos)
            .ok_or_else(|| Error::parse(self.line(), "unexpected end of input"))?;
        self.pos += 1;
        Ok(t.1)
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.1)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let line = self.line();
        let t = self.next()?;
        if t.eq_ignore_ascii_case(word) {
            Ok(())
        } else {
            Err(Error::parse(
                line,
                format!("expected {word:?}, found {t:?}"),
            ))
        }
    }

    fn number(&mut self) -> Result<f64> {
        let line = self.line();
        let t = self.next()?;
        t.parse::<f64>()
            .map_err(|_| Error::parse(line, format!("expected a number, found {t:?}")))
    }
}

struct Hierarchy {
    skel: Skeleton,
    /// Channel layout per joint in file order.
    channels: Vec<Vec<Channel>>,
}

fn parse_joint(
    tok: &mut Tokens,
    parent: i32,
    h: &mut Hierarchy,
    names: &mut Vec<String>,
    parents: &mut Vec<i32>,
    offsets: &mut Vec<[f64; 3]>,
    end_sites: &mut Vec<Option<[f64; 3]>>,
) -> Result<()> {
    let line = tok.line();
    let name = tok.next()?.to_string();
    let index = names.len();
    names.push(name.clone());
    parents.push(parent);
    end_sites.push(None);
    tok.expect("{")?;
    tok.expect("OFFSET")?;
    offsets.push([tok.number()?, tok.number()?, tok.number()?]);
    tok.expect("CHANNELS")?;
    let count_line = tok.line();
    let n = tok.number()?;
    if n.fract() != 0.0 || n < 0.0 {
        return Err(Error::parse(
            count_line,
            "channel count must be a whole number",
        ));
    }
    let mut chans = Vec::new();
    for _ in 0..n as usize {
        let cl = tok.line();
        let c = tok.next()?;
        chans.push(
            parse_channel(c).ok_or_else(|| Error::parse(cl, format!("unknown channel {c:?}")))?,
        );
    }
    let rot: Vec<Axis> = chans
        .iter()
        .filter_map(|c| match c {
            Channel::Rot(a) => Some(*a),
            _ => None,
        })
        .collect();
    let pos: Vec<Axis> = chans
        .iter()
        .filter_map(|c| match c {
            Channel::Pos(a) => Some(*a),
            _ => None,
        })
        .collect();
    let expected_pos = if parent < 0 { 3 } else { 0 };
    if rot.len() != 3 || pos.len() != expected_pos {
        return Err(Error::UnsupportedFormat(format!(
            "joint {name} (line {line}) has {} position and {} rotation channels",
            pos.len(),
            rot.len()
        )));
    }
    let order = EulerOrder([rot[0], rot[1], rot[2]]);
    if !order.is_valid() {
        return Err(Error::UnsupportedFormat(format!(
            "joint {name} repeats a rotation axis"
        )));
    }
    if parent < 0 {
        h.skel.root_position_order = [pos[0], pos[1], pos[2]];
    }
    h.skel.rotation_orders.push(order);
    h.channels.push(chans);
    loop {
        let l = tok.line();
        match tok.next()? {
            "}" => break,
            t if t.eq_ignore_ascii_case("JOINT") => {
                parse_joint(tok, index as i32, h, names, parents, offsets, end_sites)?
            }
            t if t.eq_ignore_ascii_case("End") => {
                tok.expect("Site")?;
                tok.expect("{")?;
                tok.expect("OFFSET")?;
                end_sites[index] = Some([tok.number()?, tok.number()?, tok.number()?]);
                tok.expect("}")?;
            }
            other => return Err(Error::parse(l, format!("unexpected token {other:?}"))),
        }
    }
    Ok(())
}

/// Parse BVH text, converting Euler channels to `param`.
pub fn parse_bvh(text: &str, param: RotationParam) -> Result<(Skeleton, MotionClip)> {
    let mut tok = Tokens::new(text);
    tok.expect("HIERARCHY")?;
    tok.expect("ROOT")?;
    let mut h = Hierarchy {
        skel: Skeleton {
            names: vec![],
            parents: vec![],
            offsets: vec![],
            parts: vec![],
            rotation_orders: vec![],
            root_position_order: [Axis::X, Axis::Y, Axis::Z],
            end_sites: vec![],
        },
        channels: vec![],
    };
    let (mut names, mut parents, mut offsets, mut end_sites) = (vec![], vec![], vec![], vec![]);
    parse_joint(
        &mut tok,
        -1,
        &mut h,
        &mut names,
        &mut parents,
        &mut offsets,
        &mut end_sites,
    )?;
    if tok.peek().is_some_and(|t| t.eq_ignore_ascii_case("ROOT")) {
        return Err(Error::UnsupportedFormat("multiple roots".into()));
    }
    h.skel.parts = names.iter().map(|n| classify_joint(n)).collect();
    h.skel.names = names;
    h.skel.parents = parents;
    h.skel.offsets = offsets;
    h.skel.end_sites = end_sites;

    tok.expect("MOTION")?;
    tok.expect("Frames:")?;
    let fl = tok.line();
    let frames = tok.number()?;
    if frames < 0.0 || frames.fract() != 0.0 {
        return Err(Error::parse(fl, "frame count must be a whole number"));
    }
    let frames = frames as usize;
    tok.expect("Frame")?;
    tok.expect("Time:")?;
    let tl = tok.line();
    let frame_time = tok.number()?;
    if !(frame_time > 0.0) {
        return Err(Error::parse(tl, "frame time must be positive"));
    }
    let joints = h.skel.joint_count();
    let mut clip = MotionClip {
        fps: fps_from_frame_time(frame_time),
        param,
        root_translations: Vec::with_capacity(frames),
        rotations: Vec::with_capacity(frames),
    };
    for _ in 0..frames {
        let mut root = [0.0; 3];
        let mut row = Vec::with_capacity(joints * param.block_len());
        for j in 0..joints {
            let mut deg = [0.0; 3];
            let mut r = 0;
            for ch in &h.channels[j] {
                let v = tok.number()?;
                match ch {
                    Channel::Pos(a) => root[a.index()] = v,
                    Channel::Rot(_) => {
                        deg[r] = v;
                        r += 1;
                    }
                }
            }
            let m = h.skel.rotation_orders[j].to_matrix(deg);
            row.extend(param.encode(&m));
        }
        clip.root_translations.push(root);
        clip.rotations.push(row);
    }
    if let Some(extra) = tok.peek() {
        return Err(Error::parse(
            tok.line(),
            format!("trailing data after {frames} frames: {extra:?}"),
        ));
    }
    h.skel.validate()?;
    Ok((h.skel, clip))
}

/// `1 / frame_time`, snapped to a whole rate when the header value is that
/// rate's period rounded to six decimals (e.g. 0.016667 -> 60).
fn fps_from_frame_time(frame_time: f64) -> f64 {
    let raw = 1.0 / frame_time;
    let whole = raw.round();
    if whole >= 1.0 && (1.0 / whole - frame_time).abs() <= 5e-7 {
        whole
    } else {
        raw
    }
}

fn axis_name(a: Axis) -> &'static str {
    match a {
        Axis::X => "X",
        Axis::Y => "Y",
        Axis::Z => "Z",
    }
}

fn write_joint(out: &mut String, skel: &Skeleton, j: usize, depth: usize) {
    let ind = "\t".repeat(depth);
    let kw = if j == 0 { "ROOT" } else { "JOINT" };
    let o = skel.offsets[j];
    let _ = writeln!(out, "{ind}{kw} {}", skel.names[j]);
    let _ = writeln!(out, "{ind}{{");
    let _ = writeln!(out, "{ind}\tOFFSET {:.6} {:.6} {:.6}", o[0], o[1], o[2]);
    let rot = skel.rotation_orders[j]
        .0
        .map(|a| format!("{}rotation", axis_name(a)));
    if j == 0 {
        let pos = skel
            .root_position_order
            .map(|a| format!("{}position", axis_name(a)));
        let _ = writeln!(out, "{ind}\tCHANNELS 6 {} {}", pos.join(" "), rot.join(" "));
    } else {
        let _ = writeln!(out, "{ind}\tCHANNELS 3 {}", rot.join(" "));
    }
    for c in (j + 1)..skel.joint_count() {
        if skel.parents[c] == j as i32 {
            write_joint(out, skel, c, depth + 1);
        }
    }
    if let Some(e) = skel.end_sites[j] {
        let _ = writeln!(out, "{ind}\tEnd Site");
        let _ = writeln!(out, "{ind}\t{{");
        let _ = writeln!(out, "{ind}\t\tOFFSET {:.6} {:.6} {:.6}", e[0], e[1], e[2]);
        let _ = writeln!(out, "{ind}\t}}");
    }
    let _ = writeln!(out, "{ind}}}");
}

/// Depth-first joint order as it appears in the file, which is the channel
/// order of each MOTION line.
fn file_order(skel: &Skeleton) -> Vec<usize> {
    fn visit(skel: &Skeleton, j: usize, out: &mut Vec<usize>) {
        out.push(j);
        for c in (j + 1)..skel.joint_count() {
            if skel.parents[c] == j as i32 {
                visit(skel, c, out);
            }
        }
    }
    let mut out = Vec::with_capacity(skel.joint_count());
    visit(skel, 0, &mut out);
    out
}

pub fn write_bvh(skel: &Skeleton, clip: &MotionClip) -> Result<String> {
    skel.validate()?;
    clip.validate(skel)?;
    let order = file_order(skel);
    if order.iter().enumerate().any(|(i, &j)| i != j) {
        // Parsed skeletons are always in file order; hand-built ones must be too.
        return Err(Error::Invalid(
            "skeleton joints are not in depth-first order".into(),
        ));
    }
    let mut out = String::from("HIERARCHY\n");
    write_joint(&mut out, skel, 0, 0);
    let _ = writeln!(out, "MOTION");
    let _ = writeln!(out, "Frames: {}", clip.frame_count());
    let _ = writeln!(out, "Frame Time: {:.9}", 1.0 / clip.fps);
    for k in 0..clip.frame_count() {
        let mut vals: Vec<String> = Vec::new();
        for j in 0..skel.joint_count() {
            if j == 0 {
                for a in skel.root_position_order {
                    vals.push(format!("{:.6}", clip.root_translations[k][a.index()]));
                }
            }
            let m = clip.param.decode(clip.rotation_block(k, j));
            for deg in skel.rotation_orders[j].from_matrix(&m) {
                let deg = if deg.abs() < 5e-7 { 0.0 } else { deg };
                vals.push(format!("{deg:.6}"));
            }
        }
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = "HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  End Site
  {
    OFFSET 0 1 0
  }
}
MOTION
Frames: 2
Frame Time: 0.016667
0 0 0 0 0 0
0.5 0 0 0 0 0
";

    #[test]
    fn single_joint_identity() {
        for p in [RotationParam::Cont6, RotationParam::ExpMap3] {
            let (skel, clip) = parse_bvh(SINGLE, p).unwrap();
            assert_eq!(skel.joint_count(), 1);
            assert_eq!(clip.frame_count(), 2);
            for k in 0..2 {
                for (a, b) in clip.rotation_block(k, 0).iter().zip(p.identity_block()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            assert!((clip.fps - 60.0).abs() < 1e-3);
            assert_eq!(clip.root_translations[1], [0.5, 0.0, 0.0]);
        }
    }

    #[test]
    fn malformed_header_reports_line() {
        let bad = SINGLE.replace("OFFSET 0 0 0", "OFFSET 0 zero 0");
        match parse_bvh(&bad, RotationParam::Cont6) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let bad = SINGLE.replace("MOTION", "MOTIONS");
        assert!(matches!(
            parse_bvh(&bad, RotationParam::Cont6),
            Err(Error::Parse { line: 11, .. })
        ));
    }

    #[test]
    fn unsupported_channels() {
        let bad = SINGLE.replace(
            "CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation",
            "CHANNELS 3 Xposition Yposition Zposition",
        );
        let bad = bad.replace("0 0 0 0 0 0\n0.5 0 0 0 0 0", "0 0 0\n0.5 0 0");
        assert!(matches!(
            parse_bvh(&bad, RotationParam::Cont6),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn write_parse_round_trip() {
        let text = "HIERARCHY
ROOT Hips
{
\tOFFSET 0 0 0
\tCHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
\tJOINT Spine
\t{
\t\tOFFSET 0 0.1 0
\t\tCHANNELS 3 Zrotation Yrotation Xrotation
\t\tJOINT LeftHandIndex1
\t\t{
\t\t\tOFFSET 0 0.1 0
\t\t\tCHANNELS 3 Xrotation Yrotation Zrotation
\t\t\tEnd Site
\t\t\t{
\t\t\t\tOFFSET 0 0.03 0
\t\t\t}
\t\t}
\t}
}
MOTION
Frames: 3
Frame Time: 0.033333
0.1 0.9 -0.2 10 20 30 -45 12.5 80 5 -60 170
0.2 0.9 -0.2 -170 -30 60 0 0 0 1 2 3
0.3 0.8 -0.1 33.3 44.4 -55.5 90 -10 0.5 -1 -2 -3
";
        let (skel, clip) = parse_bvh(text, RotationParam::Cont6).unwrap();
        assert_eq!(skel.parts[2], crate::motion::BodyPart::Hand);
        let written = write_bvh(&skel, &clip).unwrap();
        let (skel2, clip2) = parse_bvh(&written, RotationParam::Cont6).unwrap();
        assert_eq!(skel2.names, skel.names);
        assert_eq!(skel2.rotation_orders, skel.rotation_orders);
        // Compare raw channel values: re-emit both as Euler degrees.
        let chans = |s: &str| -> Vec<f64> {
            s.split("Frame Time:")
                .nth(1)
                .unwrap()
                .split_whitespace()
                .skip(1)
                .map(|t| t.parse().unwrap())
                .collect()
        };
        let orig = chans(text);
        let again = chans(&written);
        assert_eq!(orig.len(), again.len());
        for (a, b) in orig.iter().zip(&again) {
            assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
        }
        let _ = clip2;
    }
}
