use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use semgest_core::align::{build_plan, load_strokes, render_plan, splice_strokes, synthesize, MergePlan, StrokeSegment, SynthesisConfig};
use semgest_core::audio::{build_feature_stack, read_wav, TokenRate};
use semgest_core::codec::{CodecConfig, GestureCodec, TokenSeq};
use semgest_core::demo::AnnotatedItem;
use semgest_core::eval::{fgd, fit_crossmodal_map, mean_std, sc, semantic_matching_score, write_csv, FeatureCloud, MetricReport, DEFAULT_SCORER_PROMPT};
use semgest_core::generator::{fit_generator, perplexity, sample_sequence, sft_finetune, CondCategoricalModel, GeneratorConfig, SftExample, Vocab};
use semgest_core::index::{load_library, match_candidates, temporal_mean_latent, EmbeddingProvider, SemanticIndex, ServiceEmbedder};
use semgest_core::motion::{parse_bvh, write_bvh, MotionClip, Skeleton};
use semgest_core::net::{HttpTransport, ResponseCache};
use semgest_core::retrieval::{
    build_instruction_dataset, check_pair, filter_valid, render_annotated, retrieve_baseline, retrieve_llm, write_jsonl,
    Annotation, ChatClient, Source, Tag, TimedTranscript, ValidationReport, DEFAULT_INSTRUCTION,
};

use crate::config::{Loaded, Mode, Provider};
use crate::{Cli, Command, Invalid, Metric};

/// Provenance written next to every artifact.
#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    config_hash: String,
    command: String,
}

fn meta_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_meta(p: &Path, ctx: &Loaded, command: &str) -> Result<()> {
    let m = Meta {
        config_hash: ctx.hash.clone(),
        command: command.into(),
    };
    std::fs::write(meta_path(p), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

/// Refuse artifacts produced under a different configuration.
fn check_lineage(p: &Path, ctx: &Loaded) -> Result<()> {
    let mp = meta_path(p);
    if !mp.exists() {
        return Ok(());
    }
    let m: Meta = serde_json::from_str(&std::fs::read_to_string(&mp)?)?;
    if m.config_hash != ctx.hash {
        return Err(Invalid(format!(
            "{} was produced under config {}, current config is {}",
            p.display(),
            m.config_hash,
            ctx.hash
        ))
        .into());
    }
    Ok(())
}

fn require(p: &Path, what: &str) -> Result<()> {
    if !p.exists() {
        return Err(Invalid(format!("{what} {} does not exist", p.display())).into());
    }
    Ok(())
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(p, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", p.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(p: &Path) -> Result<T> {
    require(p, "input")?;
    let text = std::fs::read_to_string(p)?;
    serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", p.display())).into())
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn load_bvh(p: &Path, ctx: &Loaded) -> Result<(Skeleton, MotionClip)> {
    require(p, "motion file")?;
    let text = std::fs::read_to_string(p)?;
    let (skel, clip) = parse_bvh(&text, ctx.config.rates.rotation).with_context(|| format!("parsing {}", p.display()))?;
    if (clip.fps - ctx.config.rates.fps).abs() > 1e-6 {
        return Err(Invalid(format!(
            "{} runs at {} fps, config expects {}",
            p.display(),
            clip.fps,
            ctx.config.rates.fps
        ))
        .into());
    }
    Ok((skel, clip))
}

fn load_codec(ctx: &Loaded) -> Result<GestureCodec> {
    let p = ctx.path(&ctx.config.paths.codec);
    require(&p, "codec")?;
    let codec = GestureCodec::load(&p).with_context(|| format!("loading codec {}", p.display()))?;
    if codec.downsample() != ctx.config.rates.downsample || (codec.fps() - ctx.config.rates.fps).abs() > 1e-9 {
        return Err(Invalid(format!(
            "codec {} was trained at {} fps / {}, config says {} / {}",
            p.display(),
            codec.fps(),
            codec.downsample(),
            ctx.config.rates.fps,
            ctx.config.rates.downsample
        ))
        .into());
    }
    Ok(codec)
}

fn load_generator(p: &Path, codec: &GestureCodec) -> Result<CondCategoricalModel> {
    require(p, "generator")?;
    let model = CondCategoricalModel::load(p).with_context(|| format!("loading generator {}", p.display()))?;
    if model.vocab != Vocab::of(codec) {
        let stale = semgest_core::Error::StaleTokens {
            artifact: format!("generator {}", p.display()),
            expected: codec.body.fingerprint.0.clone(),
            found: model.vocab.body_fingerprint.0.clone(),
        };
        return Err(stale.into());
    }
    Ok(model)
}

fn load_index(ctx: &Loaded) -> Result<SemanticIndex> {
    let p = ctx.path(&ctx.config.paths.index);
    require(&p, "index")?;
    Ok(SemanticIndex::load(&p).with_context(|| format!("loading index {}", p.display()))?)
}

fn rate(ctx: &Loaded) -> TokenRate {
    TokenRate {
        fps: ctx.config.rates.fps,
        downsample: ctx.config.rates.downsample,
    }
}

fn cache(ctx: &Loaded) -> Result<ResponseCache> {
    Ok(ResponseCache::on_disk(ctx.path(&ctx.config.paths.cache))?)
}

fn service_embedder(ctx: &Loaded) -> Result<ServiceEmbedder> {
    Ok(ServiceEmbedder::new(ctx.config.embedding.clone(), Arc::new(HttpTransport), cache(ctx)?)?)
}

/// The provider that embedded `index`.
fn provider_for(index: &SemanticIndex, ctx: &Loaded) -> Result<Box<dyn EmbeddingProvider>> {
    match &index.embedder {
        Some(e) => Ok(Box::new(e.clone())),
        None => Ok(Box::new(service_embedder(ctx)?)),
    }
}

fn template(ctx: &Loaded) -> Result<String> {
    match &ctx.config.retrieval.template {
        Some(p) => {
            let p = ctx.path(p);
            require(&p, "instruction template")?;
            Ok(std::fs::read_to_string(p)?)
        }
        None => Ok(DEFAULT_INSTRUCTION.to_string()),
    }
}

fn bvh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bvh"))
        .collect();
    out.sort();
    Ok(out)
}

/// Retrieval result as written by `retrieve`.
#[derive(Debug, Serialize, Deserialize)]
struct RetrievalOutput {
    config_hash: String,
    mode: Mode,
    transcript: TimedTranscript,
    annotations: Vec<Annotation>,
    midpoints: Vec<f64>,
    report: ValidationReport,
    retries: u32,
}

/// Annotation files may hold a retrieval output or a bare list.
fn read_annotations(p: &Path, ctx: &Loaded) -> Result<Vec<Annotation>> {
    require(p, "annotations")?;
    let v: serde_json::Value = read_json(p)?;
    if v.is_array() {
        return Ok(serde_json::from_value(v).map_err(|e| Invalid(format!("{}: {e}", p.display())))?);
    }
    let out: RetrievalOutput = serde_json::from_value(v).map_err(|e| Invalid(format!("{}: {e}", p.display())))?;
    if out.config_hash != ctx.hash {
        log::warn!("{} comes from config {}, current is {}", p.display(), out.config_hash, ctx.hash);
    }
    Ok(out.annotations)
}

fn retrieve_auto(
    ctx: &Loaded,
    mode: Mode,
    transcript: &TimedTranscript,
    index: &SemanticIndex,
) -> Result<semgest_core::retrieval::RetrievalResult> {
    match mode {
        Mode::Baseline => {
            let provider = provider_for(index, ctx)?;
            Ok(retrieve_baseline(transcript, index, provider.as_ref(), &ctx.config.retrieval.baseline)?)
        }
        Mode::Llm => {
            let client = ChatClient::new(ctx.config.llm.clone(), Arc::new(HttpTransport), cache(ctx)?)?;
            Ok(retrieve_llm(transcript, index, &client, &template(ctx)?)?)
        }
        Mode::Manual => Err(Invalid("manual mode needs --plan or --annotations".into()).into()),
    }
}

fn load_transcript(p: &Path) -> Result<TimedTranscript> {
    require(p, "transcript")?;
    Ok(TimedTranscript::load(p).with_context(|| format!("loading {}", p.display()))?)
}

fn load_audio(p: &Path) -> Result<semgest_core::audio::AudioBuffer> {
    require(p, "audio")?;
    Ok(read_wav(p).with_context(|| format!("reading {}", p.display()))?)
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.deterministic {
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    let ctx = Loaded::load(cli.config.as_deref(), cli.seed)?;
    log::info!("config hash {}", ctx.hash);
    match cli.command {
        Command::ExtractFeatures { audio, out, motion } => {
            let a = load_audio(&audio)?;
            let expected = match motion {
                Some(m) => {
                    let (_, clip) = load_bvh(&m, &ctx)?;
                    Some(clip.frame_count().div_ceil(ctx.config.rates.downsample))
                }
                None => None,
            };
            let track = build_feature_stack(&a, rate(&ctx), expected, &ctx.config.features)?;
            ensure_parent(&out)?;
            track.save(&out)?;
            write_meta(&out.with_extension("feat"), &ctx, "extract-features")?;
            println!(
                "{} token frames x {} features, {} beats -> {}",
                track.frame_count(),
                track.stacked().ncols(),
                track.beats.len(),
                out.with_extension("feat").display()
            );
        }
        Command::TrainCodec { motion, out } => {
            let mut files = motion;
            if files.is_empty() {
                files = bvh_files(&ctx.path(&ctx.config.paths.train_dir))?;
            }
            if ctx.config.codec.include_library {
                let lib = ctx.path(&ctx.config.paths.library);
                require(&lib, "library")?;
                let dir = ctx.library_dir();
                for r in load_library(&lib)? {
                    files.extend(r.motion_clips.iter().map(|c| dir.join(c)));
                }
            }
            if files.is_empty() {
                return Err(Invalid("no training motion".into()).into());
            }
            let mut skel: Option<Skeleton> = None;
            let mut clips = Vec::new();
            for f in &files {
                let (s, c) = load_bvh(f, &ctx)?;
                match &skel {
                    Some(k) if k.names != s.names => {
                        return Err(Invalid(format!("{} uses a different skeleton", f.display())).into())
                    }
                    Some(_) => {}
                    None => skel = Some(s),
                }
                clips.push(c);
            }
            let cfg = CodecConfig {
                downsample: ctx.config.rates.downsample,
                latent_dim: ctx.config.codec.latent_dim,
                layers: ctx.config.codec.layers,
                codebook_size: ctx.config.codec.codebook_size,
                seed: ctx.config.sampler.seed,
            };
            let skel = skel.expect("at least one clip");
            let (codec, report) = GestureCodec::train(&skel, &clips, ctx.config.codec.clip_frames, &cfg, &ctx.hash)?;
            let out = out.unwrap_or_else(|| ctx.path(&ctx.config.paths.codec));
            ensure_parent(&out)?;
            codec.save(&out)?;
            write_meta(&out, &ctx, "train-codec")?;
            let mut report_path = out.clone().into_os_string();
            report_path.push(".report.json");
            write_json(Path::new(&report_path), &json!({"config_hash": ctx.hash, "report": report}))?;
            println!(
                "trained codec on {} clips: body {}, hand {} -> {}",
                clips.len(),
                codec.body.fingerprint,
                codec.hand.as_ref().map_or("-".to_string(), |h| h.fingerprint.to_string()),
                out.display()
            );
        }
        Command::Tokenize { motion, out } => {
            let codec = load_codec(&ctx)?;
            let (_, clip) = load_bvh(&motion, &ctx)?;
            let tokens = codec.encode(&clip)?;
            ensure_parent(&out)?;
            std::fs::write(&out, tokens.to_text())?;
            write_meta(&out, &ctx, "tokenize")?;
            println!("{} token frames -> {}", tokens.len(), out.display());
        }
        Command::Detokenize { tokens, out } => {
            let codec = load_codec(&ctx)?;
            require(&tokens, "tokens")?;
            let seq = TokenSeq::from_text(&std::fs::read_to_string(&tokens)?)?;
            let clip = codec.decode(&seq).with_context(|| format!("decoding {}", tokens.display()))?;
            ensure_parent(&out)?;
            std::fs::write(&out, write_bvh(&codec.skeleton, &clip)?)?;
            write_meta(&out, &ctx, "detokenize")?;
            println!("{} frames -> {}", clip.frame_count(), out.display());
        }
        Command::TrainGenerator { pairs, out } => {
            let codec = load_codec(&ctx)?;
            let dir = pairs.unwrap_or_else(|| ctx.path(&ctx.config.paths.train_dir));
            let mut corpora = Vec::new();
            for bvh in bvh_files(&dir)? {
                let wav = bvh.with_extension("wav");
                if !wav.exists() {
                    log::warn!("skipping {}: no paired audio", bvh.display());
                    continue;
                }
                let (_, clip) = load_bvh(&bvh, &ctx)?;
                let tokens = codec.encode(&clip)?;
                let track = build_feature_stack(&load_audio(&wav)?, rate(&ctx), Some(tokens.len()), &ctx.config.features)
                    .with_context(|| format!("features of {}", wav.display()))?;
                corpora.push((tokens, track.stacked()));
            }
            if corpora.is_empty() {
                return Err(Invalid(format!("no paired takes in {}", dir.display())).into());
            }
            let g = &ctx.config.generator;
            let cfg = GeneratorConfig {
                order: g.order,
                audio_clusters: g.audio_clusters,
                alpha: g.alpha,
                seed: ctx.config.sampler.seed,
            };
            let model = fit_generator(&corpora, Vocab::of(&codec), &cfg)?;
            let ppl: Vec<f64> = corpora
                .iter()
                .map(|(t, f)| perplexity(&model, t, f))
                .collect::<semgest_core::Result<_>>()?;
            let out = out.unwrap_or_else(|| ctx.path(&ctx.config.paths.generator));
            ensure_parent(&out)?;
            model.save(&out)?;
            write_meta(&out, &ctx, "train-generator")?;
            println!(
                "trained generator on {} takes, mean training perplexity {:.2} -> {}",
                corpora.len(),
                ppl.iter().sum::<f64>() / ppl.len() as f64,
                out.display()
            );
        }
        Command::Sft { manifest, generator, out } => {
            #[derive(Deserialize)]
            struct Item {
                audio: PathBuf,
                transcript: PathBuf,
                annotations: Option<PathBuf>,
            }
            let items: Vec<Item> = read_json(&manifest)?;
            let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
            let codec = load_codec(&ctx)?;
            let gpath = generator.unwrap_or_else(|| ctx.path(&ctx.config.paths.generator));
            let model = load_generator(&gpath, &codec)?;
            let index = load_index(&ctx)?;
            let strokes = load_strokes(&index.records, &ctx.library_dir(), &codec)?;
            let mut examples = Vec::new();
            for (i, item) in items.iter().enumerate() {
                let audio = load_audio(&base.join(&item.audio))?;
                let transcript = load_transcript(&base.join(&item.transcript))?;
                let annotations = match &item.annotations {
                    Some(p) => read_annotations(&base.join(p), &ctx)?,
                    None => retrieve_auto(&ctx, ctx.config.retrieval.mode, &transcript, &index)?.annotations,
                };
                let track = build_feature_stack(&audio, rate(&ctx), None, &ctx.config.features)?;
                let len = track.frame_count() - 1;
                let features = track.stacked();
                let seed = ctx.config.sampler.seed.wrapping_add(i as u64);
                let tokens = sample_sequence(&model, &features, len, ctx.config.sampler.top_k, seed)?;
                let plan = build_plan(&transcript, &annotations, &track.beats, len, rate(&ctx), ctx.config.ramp, &ctx.hash)?;
                let merged = splice_strokes(&tokens, &plan, &strokes)?;
                for e in plan.kept() {
                    examples.push(SftExample {
                        features: features.clone(),
                        tokens: merged.clone(),
                        interval: (e.start, e.end),
                    });
                }
            }
            let tuned = sft_finetune(&model, &examples, ctx.config.generator.sft_boost)?;
            ensure_parent(&out)?;
            tuned.save(&out)?;
            write_meta(&out, &ctx, "sft")?;
            println!("fine-tuned on {} merge intervals -> {}", examples.len(), out.display());
        }
        Command::BuildIndex { library, out } => {
            let lib = library.unwrap_or_else(|| ctx.path(&ctx.config.paths.library));
            require(&lib, "library")?;
            let records = load_library(&lib)?;
            let index = match ctx.config.index.provider {
                Provider::Lexical => SemanticIndex::build_lexical(&records, ctx.config.index.embed_dim, &ctx.config.index.ids)?,
                Provider::Service => SemanticIndex::build(&records, &service_embedder(&ctx)?, &ctx.config.index.ids)?,
            };
            let out = out.unwrap_or_else(|| ctx.path(&ctx.config.paths.index));
            ensure_parent(&out)?;
            index.save(&out)?;
            write_meta(&out, &ctx, "build-index")?;
            println!("indexed {} gestures:", index.len());
            for line in index.catalog() {
                println!("  {line}");
            }
        }
        Command::BuildInstruct { annotated, out } => {
            let index = load_index(&ctx)?;
            let items: Vec<AnnotatedItem> = read_json(&annotated)?;
            let mut pairs = Vec::with_capacity(items.len());
            for item in items {
                let mut gold = Vec::with_capacity(item.gold.len());
                for g in &item.gold {
                    let r = index.lookup(&g.label)?;
                    gold.push(Annotation {
                        word: g.word,
                        identifier: r.identifier.clone(),
                        label: r.label.clone(),
                        source: Source::Manual,
                    });
                }
                pairs.push((item.transcript, gold));
            }
            let records = build_instruction_dataset(&pairs, &index, &template(&ctx)?)?;
            ensure_parent(&out)?;
            write_jsonl(BufWriter::new(File::create(&out)?), &records)?;
            write_meta(&out, &ctx, "build-instruct")?;
            println!("{} instruction records -> {}", records.len(), out.display());
        }
        Command::Retrieve {
            transcript,
            out,
            mode,
            plan,
            annotations,
        } => {
            let index = load_index(&ctx)?;
            let t = load_transcript(&transcript)?;
            let mode = mode.unwrap_or(ctx.config.retrieval.mode);
            let result = match (mode, plan, annotations) {
                (Mode::Manual, Some(p), _) => {
                    require(&p, "plan")?;
                    let plan = MergePlan::load(&p).with_context(|| format!("loading plan {}", p.display()))?;
                    let anns = plan
                        .kept()
                        .map(|e| Annotation {
                            word: e.word,
                            identifier: e.identifier.clone(),
                            label: e.label.clone(),
                            source: Source::Manual,
                        })
                        .collect();
                    manual(&t, anns, &index)?
                }
                (Mode::Manual, None, Some(a)) => {
                    let anns = read_annotations(&a, &ctx)?
                        .into_iter()
                        .map(|a| Annotation {
                            source: Source::Manual,
                            ..a
                        })
                        .collect();
                    manual(&t, anns, &index)?
                }
                (m, _, _) => retrieve_auto(&ctx, m, &t, &index)?,
            };
            let output = RetrievalOutput {
                config_hash: ctx.hash.clone(),
                mode,
                transcript: t,
                annotations: result.annotations,
                midpoints: result.midpoints,
                report: result.report,
                retries: result.retries,
            };
            write_json(&out, &output)?;
            println!(
                "{} gestures retrieved ({:.0}% of proposals valid) -> {}",
                output.annotations.len(),
                100.0 * output.report.ratio(),
                out.display()
            );
            for (a, m) in output.annotations.iter().zip(&output.midpoints) {
                println!("  word {:>3} {:<12} [{} {}] at {m:.2}s", a.word, output.transcript.words[a.word].w, a.identifier, a.label);
            }
        }
        Command::Plan {
            audio,
            transcript,
            annotations,
            out,
        } => {
            let a = load_audio(&audio)?;
            let t = load_transcript(&transcript)?;
            let anns = read_annotations(&annotations, &ctx)?;
            let track = build_feature_stack(&a, rate(&ctx), None, &ctx.config.features)?;
            let plan = build_plan(&t, &anns, &track.beats, track.frame_count() - 1, rate(&ctx), ctx.config.ramp, &ctx.hash)?;
            write_json(&out, &plan)?;
            println!("{} of {} gestures placed -> {}", plan.kept().count(), plan.entries.len(), out.display());
        }
        Command::Synthesize {
            audio,
            transcript,
            out,
            annotations,
            plan,
            baseline_out,
        } => {
            let a = load_audio(&audio)?;
            let t = load_transcript(&transcript)?;
            let codec = load_codec(&ctx)?;
            let model = load_generator(&ctx.path(&ctx.config.paths.generator), &codec)?;
            let index = load_index(&ctx)?;
            let strokes: BTreeMap<String, StrokeSegment> = load_strokes(&index.records, &ctx.library_dir(), &codec)?;
            let cfg = SynthesisConfig {
                top_k: ctx.config.sampler.top_k,
                seed: ctx.config.sampler.seed,
                ramp: ctx.config.ramp,
            };
            let result = match plan {
                Some(p) => {
                    require(&p, "plan")?;
                    let plan = MergePlan::load(&p).with_context(|| format!("loading plan {}", p.display()))?;
                    let track = build_feature_stack(&a, rate(&ctx), None, &ctx.config.features)?;
                    let len = track.frame_count() - 1;
                    if plan.tokens != len {
                        return Err(Invalid(format!("plan covers {} token frames, audio gives {len}", plan.tokens)).into());
                    }
                    let tokens = sample_sequence(&model, &track.stacked(), len, cfg.top_k, cfg.seed)?;
                    render_plan(tokens, plan, &strokes, &codec)?
                }
                None => {
                    let anns = match annotations {
                        Some(p) => read_annotations(&p, &ctx)?,
                        None => retrieve_auto(&ctx, ctx.config.retrieval.mode, &t, &index)?.annotations,
                    };
                    synthesize(&a, &t, &anns, &strokes, &codec, &model, &ctx.config.features, &cfg)?
                }
            };
            ensure_parent(&out)?;
            std::fs::write(&out, write_bvh(&codec.skeleton, &result.motion)?)?;
            write_meta(&out, &ctx, "synthesize")?;
            let plan_path = out.with_extension("plan.json");
            write_json(&plan_path, &result.plan)?;
            if let Some(b) = baseline_out {
                ensure_parent(&b)?;
                std::fs::write(&b, write_bvh(&codec.skeleton, &result.baseline)?)?;
                write_meta(&b, &ctx, "synthesize")?;
            }
            println!(
                "{} frames with {} merged gestures -> {} (plan {})",
                result.motion.frame_count(),
                result.plan.kept().count(),
                out.display(),
                plan_path.display()
            );
        }
        Command::Evaluate {
            metric,
            out,
            csv,
            real,
            generated,
            pairs,
            annotations,
        } => evaluate(&ctx, metric, &out, csv.as_deref(), &real, &generated, pairs.as_deref(), &annotations)?,
        Command::MatchCandidates {
            anchor,
            candidates,
            threshold,
            out,
        } => {
            let codec = load_codec(&ctx)?;
            let (_, a) = load_bvh(&anchor, &ctx)?;
            let clips: Vec<MotionClip> = candidates
                .iter()
                .map(|p| load_bvh(p, &ctx).map(|x| x.1))
                .collect::<Result<_>>()?;
            let matches = match_candidates(&a, &clips, threshold, &codec)?;
            let rows: Vec<_> = matches
                .iter()
                .map(|m| json!({"candidate": candidates[m.index], "distance": m.distance}))
                .collect();
            write_json(&out, &json!({"config_hash": ctx.hash, "threshold": threshold, "matches": rows}))?;
            println!("{} of {} candidates within {threshold} -> {}", matches.len(), clips.len(), out.display());
        }
    }
    Ok(())
}

fn manual(
    t: &TimedTranscript,
    anns: Vec<Annotation>,
    index: &SemanticIndex,
) -> Result<semgest_core::retrieval::RetrievalResult> {
    for a in &anns {
        if let Some(h) = check_pair(&a.identifier, &a.label, index) {
            log::warn!("manual annotation [{} {}] is {h:?}", a.identifier, a.label);
        }
    }
    Ok(filter_valid(t, anns, index, 0)?)
}

/// Temporal-mean latents over half-overlapping windows of every clip.
fn feature_cloud(files: &[PathBuf], ctx: &Loaded, codec: &GestureCodec, tag: &str) -> Result<FeatureCloud> {
    let w = ctx.config.evaluation.window_tokens.max(1);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for f in files {
        let (_, clip) = load_bvh(f, ctx)?;
        let (body, hand) = codec.latents(&clip)?;
        let l = body.len();
        let step = (w / 2).max(1);
        let mut start = 0;
        loop {
            let end = (start + w).min(l);
            let mut row = vec![0.0; body.values.ncols() + hand.as_ref().map_or(0, |h| h.values.ncols())];
            for t in start..end {
                let mut c = 0;
                for v in body.values.row(t).iter().chain(hand.iter().flat_map(|h| h.values.row(t).iter().copied().collect::<Vec<_>>().into_iter()).collect::<Vec<_>>().iter()) {
                    row[c] += v / (end - start) as f64;
                    c += 1;
                }
            }
            rows.push(row);
            if end >= l {
                break;
            }
            start += step;
        }
    }
    Ok(FeatureCloud::from_rows(&rows, tag)?)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    ctx: &Loaded,
    metric: Metric,
    out: &Path,
    csv: Option<&Path>,
    real: &[PathBuf],
    generated: &[PathBuf],
    pairs: Option<&Path>,
    annotations: &[PathBuf],
) -> Result<()> {
    let mut per_item: Vec<(String, f64)> = Vec::new();
    let report = match metric {
        Metric::Fgd => {
            if real.is_empty() || generated.is_empty() {
                bail!(Invalid("fgd needs --real and --generated clips".into()));
            }
            for g in generated {
                check_lineage(g, ctx)?;
            }
            let codec = load_codec(ctx)?;
            let a = feature_cloud(real, ctx, &codec, "real")?;
            let b = feature_cloud(generated, ctx, &codec, "generated")?;
            let value = fgd(&a, &b)?;
            MetricReport {
                metric: "fgd".into(),
                value,
                std: None,
                n: b.len(),
                config_hash: ctx.hash.clone(),
                note: "features are codec latents; not comparable with published values".into(),
            }
        }
        Metric::Sc => {
            #[derive(Deserialize)]
            struct Pair {
                motion: PathBuf,
                text: String,
            }
            let p = pairs.ok_or_else(|| Invalid("sc needs --pairs".into()))?;
            let items: Vec<Pair> = read_json(p)?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            let codec = load_codec(ctx)?;
            let index = load_index(ctx)?;
            let provider = provider_for(&index, ctx)?;
            // Map fitted on the library: clip latents onto their metadata embeddings.
            let dir = ctx.library_dir();
            let mut train = Vec::new();
            for (r, v) in index.records.iter().zip(&index.record_vectors) {
                for c in &r.motion_clips {
                    let (_, clip) = load_bvh(&dir.join(c), ctx)?;
                    train.push((temporal_mean_latent(&clip, &codec)?, v.clone()));
                }
            }
            let map = fit_crossmodal_map(
                &train,
                ctx.config.evaluation.ridge_lambda,
                &codec.body.fingerprint.0,
                &provider.family(),
            )?;
            let mut values = Vec::new();
            for it in &items {
                let path = base.join(&it.motion);
                check_lineage(&path, ctx)?;
                let (_, clip) = load_bvh(&path, ctx)?;
                let v = sc(&clip, &it.text, &map, provider.as_ref(), &codec)?;
                per_item.push((it.motion.display().to_string(), v));
                values.push(v);
            }
            let (mean, std) = mean_std(&values);
            MetricReport {
                metric: "sc".into(),
                value: mean,
                std: Some(std),
                n: values.len(),
                config_hash: ctx.hash.clone(),
                note: String::new(),
            }
        }
        Metric::Accuracy | Metric::Smatch => {
            if annotations.is_empty() {
                bail!(Invalid("this metric needs --annotations".into()));
            }
            let index = load_index(ctx)?;
            let mut outputs = Vec::new();
            for p in annotations {
                let o: RetrievalOutput = read_json(p)?;
                if o.config_hash != ctx.hash {
                    bail!(Invalid(format!(
                        "{} was produced under config {}, current config is {}",
                        p.display(),
                        o.config_hash,
                        ctx.hash
                    )));
                }
                outputs.push((p, o));
            }
            if metric == Metric::Accuracy {
                // Proposals before filtering count, so recompute from the reports.
                let (valid, total) = outputs.iter().fold((0, 0), |(v, t), (p, o)| {
                    let vv = o.report.valid.len();
                    let tt = o.report.total();
                    per_item.push((p.display().to_string(), o.report.ratio()));
                    (v + vv, t + tt)
                });
                let _ = &index;
                MetricReport {
                    metric: "retrieval_accuracy".into(),
                    value: if total == 0 { 1.0 } else { valid as f64 / total as f64 },
                    std: None,
                    n: total,
                    config_hash: ctx.hash.clone(),
                    note: String::new(),
                }
            } else {
                let texts: Vec<String> = outputs
                    .iter()
                    .map(|(_, o)| {
                        let tags: Vec<Tag> = o
                            .annotations
                            .iter()
                            .map(|a| Tag {
                                position: a.word,
                                identifier: a.identifier.clone(),
                                label: a.label.clone(),
                            })
                            .collect();
                        render_annotated(&o.transcript.word_texts(), &tags)
                    })
                    .collect();
                let client = ChatClient::new(ctx.config.evaluation.scorer.clone(), Arc::new(HttpTransport), cache(ctx)?)?;
                let s = semantic_matching_score(&texts, &client, DEFAULT_SCORER_PROMPT, ctx.config.evaluation.scorer_runs)?;
                for it in &s.items {
                    per_item.push((format!("run{}:{}", it.run, annotations[it.item].display()), it.score));
                }
                MetricReport {
                    metric: "semantic_matching".into(),
                    value: s.mean,
                    std: Some(s.std),
                    n: s.items.len(),
                    config_hash: ctx.hash.clone(),
                    note: format!("{} replies skipped", s.skipped),
                }
            }
        }
    };
    write_json(out, &report)?;
    if let Some(c) = csv {
        ensure_parent(c)?;
        write_csv(BufWriter::new(File::create(c)?), ("item", &report.metric), &per_item)?;
    }
    println!(
        "{} = {:.6}{} (n = {}) -> {}",
        report.metric,
        report.value,
        report.std.map_or(String::new(), |s| format!(" +- {s:.6}")),
        report.n,
        out.display()
    );
    Ok(())
}
