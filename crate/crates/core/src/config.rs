//! Experiment configuration: a versioned TOML document. Unknown keys and
//! schema mismatches are rejected with the offending field path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::{Normalization, DEFAULT_CLIPS};
use crate::analysis::ProbeConfig;
use crate::error::{Error, Result};
use crate::synth::SynthConfig;
use crate::tensor::Precision;
use crate::training::{PretrainConfig, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Utterances per test split used by the analysis battery; 0 keeps all.
    pub eval_limit: usize,
    /// Utterances per split for the single-prompt ablation sweep; 0 keeps all.
    pub ablation_limit: usize,
    pub kmeans_seed: u64,
    pub probe: ProbeConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            eval_limit: 0,
            ablation_limit: 200,
            kmeans_seed: 0,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub n_clips: usize,
    pub normalization: Normalization,
    /// Forward the clips with the tuned prompts in place.
    pub with_prompts: bool,
    /// Restrict the bias clips to one OOD subtype (`keyboard`, `printer`).
    pub ood_family: Option<String>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            n_clips: DEFAULT_CLIPS,
            normalization: Normalization::Rms,
            with_prompts: true,
            ood_family: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReproduceConfig {
    /// Tuning seeds; every seed trains a baseline and an `m = prompts` arm.
    pub seeds: Vec<u64>,
    /// Larger prompt count trained once (first seed) for the clustering view.
    pub variant_prompts: Option<usize>,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        ReproduceConfig {
            seeds: vec![0, 1, 2, 3, 4],
            variant_prompts: Some(50),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub corpus_seed: u64,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub tune: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub reproduce: ReproduceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            precision: Precision::F32,
            corpus_seed: 0,
            synth: SynthConfig::default(),
            pretrain: PretrainConfig::default(),
            tune: TrainConfig::default(),
            analysis: AnalysisConfig::default(),
            adapt: AdaptConfig::default(),
            reproduce: ReproduceConfig::default(),
        }
    }
}

fn field_error(path: &str, detail: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        detail: detail.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field_error(&path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field_error(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        let wrap = |section: &'static str| move |e: Error| field_error(section, e.to_string());
        self.synth.validate().map_err(wrap("synth"))?;
        self.pretrain.encoder.validate().map_err(wrap("pretrain.encoder"))?;
        self.tune.validate().map_err(wrap("tune"))?;
        if self.synth.feature_dim != self.pretrain.encoder.feature_dim {
            return Err(field_error(
                "pretrain.encoder.feature_dim",
                format!("must equal synth.feature_dim = {}", self.synth.feature_dim),
            ));
        }
        if self.reproduce.seeds.is_empty() {
            return Err(field_error("reproduce.seeds", "at least one seed is required"));
        }
        if self.adapt.n_clips == 0 {
            return Err(field_error("adapt.n_clips", "must be at least 1"));
        }
        if let Some(name) = &self.adapt.ood_family {
            let mut known = crate::synth::subtypes(crate::synth::NoiseFamily::Ood);
            if !known.any(|s| s.name == name) {
                return Err(field_error("adapt.ood_family", format!("unknown OOD subtype `{name}`")));
            }
        }
        let p = &self.analysis.probe;
        if p.bootstraps == 0 || !(0.0 < p.train_fraction && p.train_fraction < 1.0) {
            return Err(field_error("analysis.probe", "needs bootstraps >= 1 and 0 < train_fraction < 1"));
        }
        Ok(())
    }
}
