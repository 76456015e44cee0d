mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use semgest_core::align::{blend_weights, merge_timing, plan_placement, RampConfig};
use semgest_core::audio::TokenRate;
use semgest_core::codec::{quantize, Codebook, CodecConfig, GestureCodec, TokenSeq};
use semgest_core::demo;
use semgest_core::eval::{fgd, CrossModalMap, FeatureCloud};
use semgest_core::index::cosine;
use semgest_core::motion::to_frame_matrix;
use semgest_core::retrieval::{parse_annotated_text, render_annotated, Tag};

fn codec() -> &'static GestureCodec {
    static CODEC: OnceLock<GestureCodec> = OnceLock::new();
    CODEC.get_or_init(|| {
        let cfg = CodecConfig {
            downsample: 8,
            latent_dim: 16,
            layers: 3,
            codebook_size: 16,
            seed: 0,
        };
        let clips = vec![demo::training_motion(8.0, 110.0, 5)];
        GestureCodec::train(&demo::skeleton(), &clips, 240, &cfg, "prop").unwrap().0
    })
}

fn cloud(rows: &[Vec<f64>]) -> FeatureCloud {
    FeatureCloud::from_rows(rows, "p").unwrap()
}

fn rows(dim: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fgd_ignores_rotation_and_shared_shift(a in rows(3, 6..30), b in rows(3, 6..30), seed in 0u64..1000, shift in prop::collection::vec(-3.0f64..3.0, 3)) {
        let mut r = common::rng(seed);
        let q = common::random_rotation(&mut r, 3);
        let move_all = |rs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rs.iter().map(|x| common::mat_vec(&q, x).iter().zip(&shift).map(|(v, s)| v + s).collect()).collect()
        };
        let base = fgd(&cloud(&a), &cloud(&b)).unwrap();
        let moved = fgd(&cloud(&move_all(&a)), &cloud(&move_all(&b))).unwrap();
        prop_assert!((base - moved).abs() <= 1e-6 * (1.0 + base), "{base} vs {moved}");
        prop_assert!(base >= -1e-9);
    }

    #[test]
    fn fgd_is_symmetric(a in rows(2, 5..20), b in rows(2, 5..20)) {
        let ab = fgd(&cloud(&a), &cloud(&b)).unwrap();
        let ba = fgd(&cloud(&b), &cloud(&a)).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab));
    }

    #[test]
    fn sc_ignores_positive_scaling_of_the_map(w in prop::collection::vec(-2.0f64..2.0, 12), x in prop::collection::vec(-2.0f64..2.0, 4), e in prop::collection::vec(-2.0f64..2.0, 3), k in 0.01f64..100.0) {
        let map = |scale: f64| CrossModalMap {
            weights: nalgebra::DMatrix::from_row_slice(3, 4, &w) * scale,
            lambda: 0.0,
            motion_fingerprint: "m".into(),
            text_family: "t".into(),
            residual: 0.0,
            zero_residual: 0.0,
        };
        let a = cosine(&map(1.0).apply(&x).unwrap(), &e);
        let b = cosine(&map(k).apply(&x).unwrap(), &e);
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn blend_weights_sum_to_one(low in 0.0f64..1.0, span in 0.0f64..1.0, t in 0.0f64..=1.0) {
        let ramp = RampConfig { w_low: low, w_high: low + span * (1.0 - low), transition: 4 };
        let (ws, wr) = blend_weights(&ramp, t);
        prop_assert_eq!(ws + wr, 1.0);
        prop_assert!(ws >= ramp.w_low - 1e-12 && ws <= ramp.w_high + 1e-12);
    }

    #[test]
    fn merge_timing_picks_a_closest_beat(mut beats in prop::collection::vec(0.0f64..20.0, 1..15), t in 0.0f64..20.0) {
        beats.sort_by(f64::total_cmp);
        let m = merge_timing(t, &beats);
        prop_assert!(beats.contains(&m));
        prop_assert!(beats.iter().all(|b| (b - t).abs() >= (m - t).abs()));
    }

    #[test]
    fn placement_stays_inside_the_sequence(timing in 0.0f64..30.0, s in 1usize..20, extra in 0usize..100) {
        let len = s + extra;
        let rate = TokenRate { fps: 60.0, downsample: 8 };
        let (anchor, start, end, clamped) = plan_placement(timing, s, len, rate).unwrap();
        prop_assert_eq!(end - start, s);
        prop_assert!(end <= len);
        // A clamped anchor still records where the beat fell.
        prop_assert!(clamped || (anchor >= start && anchor < end));
    }

    #[test]
    fn quantizer_sum_and_residue_rebuild_the_input(z in prop::collection::vec(-3.0f64..3.0, 4), seed in 0u64..500) {
        let mut r = common::rng(seed);
        let books: Vec<Codebook> = (0..3)
            .map(|layer| Codebook { layer, entries: (0..8).map(|_| common::random_vec(&mut r, 4)).collect() })
            .collect();
        let q = quantize(&z, &books).unwrap();
        for k in 0..4 {
            prop_assert!((q.sum[k] + q.residue[k] - z[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn tags_survive_render_and_parse(words in prop::collection::vec("[a-z]{1,8}", 1..12), raw in prop::collection::vec((0usize..12, "[0-3]{1,4}", "[A-Z]{2,6}( [A-Z]{2,6})?"), 0..5)) {
        let mut tags: Vec<Tag> = raw
            .into_iter()
            .map(|(p, identifier, label)| Tag { position: p % words.len(), identifier, label })
            .collect();
        tags.sort_by_key(|t| t.position);
        let text = render_annotated(&words, &tags);
        prop_assert_eq!(parse_annotated_text(&text).unwrap(), tags);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tokens_survive_text_round_trip(start in 0usize..40, len in 1usize..20) {
        let clip = demo::training_motion(8.0, 110.0, 5);
        let tokens = codec().encode(&clip).unwrap();
        let s = start.min(tokens.len() - 1);
        let part = tokens.slice(s, (s + len).min(tokens.len()));
        prop_assert_eq!(TokenSeq::from_text(&part.to_text()).unwrap(), part);
    }

    #[test]
    fn decoding_is_local_to_each_token_frame(frame in 0usize..50, layer in 0usize..3, token in 0u32..16) {
        let c = codec();
        let clip = demo::training_motion(8.0, 110.0, 5);
        let tokens = c.encode(&clip).unwrap();
        let l = frame % tokens.len();
        let mut edited = tokens.clone();
        edited.body.frames[l][layer] = token;
        let a = to_frame_matrix(&c.decode(&tokens).unwrap());
        let b = to_frame_matrix(&c.decode(&edited).unwrap());
        let d = c.downsample();
        for row in 0..a.rows() {
            if row / d != l {
                prop_assert!(a.values.row(row) == b.values.row(row), "row {row} changed by frame {l}");
            }
        }
    }
}
