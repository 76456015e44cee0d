use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use semgest_core::align::RampConfig;
use semgest_core::audio::FeatureConfig;
use semgest_core::index::{IdConfig, ServiceConfig};
use semgest_core::motion::RotationParam;
use semgest_core::net::content_hash;
use semgest_core::retrieval::{BaselineConfig, LlmClientConfig};

use crate::Invalid;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub library: PathBuf,
    /// Directory the library's clip names are relative to; defaults to the
    /// library file's directory.
    pub library_dir: Option<PathBuf>,
    /// Paired `<stem>.wav` / `<stem>.bvh` training takes.
    pub train_dir: PathBuf,
    pub codec: PathBuf,
    pub generator: PathBuf,
    pub index: PathBuf,
    pub cache: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            library: "library/library.json".into(),
            library_dir: None,
            train_dir: "train".into(),
            codec: "work/codec.bin".into(),
            generator: "work/generator.bin".into(),
            index: "work/index.json".into(),
            cache: "work/cache".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub fps: f64,
    pub downsample: usize,
    pub rotation: RotationParam,
}

impl Default for Rates {
    fn default() -> Self {
        Rates {
            fps: 60.0,
            downsample: 8,
            rotation: RotationParam::ExpMap3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub latent_dim: usize,
    pub layers: usize,
    pub codebook_size: usize,
    /// Training clips are cut into pieces of this many frames.
    pub clip_frames: usize,
    /// Also train on the library clips.
    pub include_library: bool,
}

impl Default for CodecSection {
    fn default() -> Self {
        CodecSection {
            latent_dim: 64,
            layers: 4,
            codebook_size: 512,
            clip_frames: 240,
            include_library: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampler {
    pub top_k: usize,
    pub seed: u64,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler { top_k: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub order: usize,
    pub audio_clusters: usize,
    pub alpha: f64,
    /// Extra count weight for fine-tuning targets.
    pub sft_boost: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection {
            order: 2,
            audio_clusters: 64,
            alpha: 1.0,
            sft_boost: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Lexical,
    Service,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub provider: Provider,
    /// Dimension of the built-in lexical embedding.
    pub embed_dim: usize,
    pub ids: IdConfig,
}

impl Default for IndexSection {
    fn default() -> Self {
        IndexSection {
            provider: Provider::Lexical,
            embed_dim: 64,
            ids: IdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Llm,
    Manual,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub mode: Mode,
    pub baseline: BaselineConfig,
    /// Instruction template file; the built-in one when unset.
    pub template: Option<PathBuf>,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            mode: Mode::Baseline,
            baseline: BaselineConfig::default(),
            template: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Token frames per feature window.
    pub window_tokens: usize,
    pub ridge_lambda: f64,
    pub scorer_runs: usize,
    pub scorer: LlmClientConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            window_tokens: 8,
            ridge_lambda: 1e-3,
            scorer_runs: 10,
            scorer: LlmClientConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub rates: Rates,
    pub codec: CodecSection,
    pub sampler: Sampler,
    pub generator: GeneratorSection,
    pub features: FeatureConfig,
    pub index: IndexSection,
    pub retrieval: RetrievalSection,
    pub ramp: RampConfig,
    pub llm: LlmClientConfig,
    pub embedding: ServiceConfig,
    pub evaluation: EvalSection,
}

/// Config plus the directory its relative paths start from.
pub struct Loaded {
    pub config: PipelineConfig,
    pub base: PathBuf,
    pub hash: String,
}

impl Loaded {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let (mut config, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Invalid(format!("cannot read config {}: {e}", p.display())))?;
                let config: PipelineConfig = toml::from_str(&text)
                    .map_err(|e| Invalid(format!("config {}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (config, base)
            }
            None => (PipelineConfig::default(), PathBuf::new()),
        };
        if let Some(s) = seed {
            config.sampler.seed = s;
            config.index.ids.seed = s;
        }
        config.ramp.validate().map_err(|e| Invalid(e.to_string()))?;
        let text = serde_json::to_string(&config).context("serializing config")?;
        let hash = content_hash(&[&text])[..16].to_string();
        Ok(Loaded { config, base, hash })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn library_dir(&self) -> PathBuf {
        match &self.config.paths.library_dir {
            Some(d) => self.path(d),
            None => self
                .path(&self.config.paths.library)
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_fills_defaults() {
        let c: PipelineConfig = toml::from_str("[sampler]\ntop_k = 1\n[ramp]\ntransition = 2\n").unwrap();
        assert_eq!(c.sampler.top_k, 1);
        assert_eq!(c.sampler.seed, 0);
        assert_eq!(c.ramp.transition, 2);
        assert_eq!(c.ramp.w_low, 0.3);
        assert_eq!(c.rates.rotation, RotationParam::ExpMap3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[sampler]\ntopk = 1\n").is_err());
    }
}
