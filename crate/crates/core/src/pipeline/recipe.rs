//! One JSON manifest describing every stage of an experiment.

use serde::{Deserialize, Serialize};

use super::data::DataConfig;
use super::stages::{MbartConfig, S2utStageConfig, StageConfig, W2vConfig};
use crate::error::{Error, Result};
use crate::eval::BeamConfig;
use crate::models::ModelConfig;
use crate::tensor::RngStream;

/// Which pretrained parts the S2UT model starts from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainedParts {
    #[serde(default)]
    pub encoder: bool,
    #[serde(default)]
    pub decoder: bool,
}

fn greedy() -> BeamConfig {
    BeamConfig { beam_size: 1, ..BeamConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Decoding for checkpoint selection during training.
    #[serde(default = "greedy")]
    pub dev_beam: BeamConfig,
    /// Decoding for reported scores.
    #[serde(default)]
    pub test_beam: BeamConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { dev_beam: greedy(), test_beam: BeamConfig::default() }
    }
}

/// Span-length means and mask ratios for the denoising sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub lambda: Vec<f64>,
    pub p: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid { lambda: vec![5.0, 10.0, 15.0], p: vec![0.3, 0.5, 0.7] }
    }
}

fn full() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    /// S2UT shape. Speech encoder and unit decoder pretraining use the same
    /// shape so their weights transfer.
    pub model: ModelConfig,
    /// Target-language recognizer used for scoring.
    pub asr: StageConfig,
    #[serde(default)]
    pub source_asr: Option<StageConfig>,
    #[serde(default)]
    pub mt: Option<StageConfig>,
    #[serde(default)]
    pub t2u: Option<StageConfig>,
    #[serde(default)]
    pub w2v: Option<W2vConfig>,
    #[serde(default)]
    pub mbart: Option<MbartConfig>,
    pub s2ut: S2utStageConfig,
    #[serde(default)]
    pub pretrained: PretrainedParts,
    /// Mix weakly supervised examples into S2UT training.
    #[serde(default)]
    pub weak: bool,
    /// Number of source-only utterances turned into weak examples; 0 means
    /// as many as there are gold training examples.
    #[serde(default)]
    pub weak_count: usize,
    /// Share of the gold training duration kept for S2UT training.
    #[serde(default = "full")]
    pub train_fraction: f64,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: SweepGrid,
}

impl Recipe {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let r: Recipe = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        r.validate()?;
        Ok(r)
    }

    /// Checks every section, reporting the first offending field path.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        self.data.validate().map_err(|e| e.at("data"))?;
        self.model.validate().map_err(|e| e.at("model"))?;
        self.asr.validate().map_err(|e| e.at("asr"))?;
        for (name, s) in [("source_asr", &self.source_asr), ("mt", &self.mt), ("t2u", &self.t2u)] {
            if let Some(s) = s {
                s.validate().map_err(|e| e.at(name))?;
            }
        }
        if let Some(w) = &self.w2v {
            w.mask.validate().map_err(|e| e.at("w2v.mask"))?;
            w.train.validate().map_err(|e| e.at("w2v.train"))?;
            if w.contrastive.n_negatives == 0 || !(w.contrastive.temperature > 0.0) {
                return Err(Error::config("w2v.contrastive", "need n_negatives >= 1 and temperature > 0"));
            }
        }
        if let Some(m) = &self.mbart {
            if !(m.lambda > 0.0) {
                return Err(Error::config("mbart.lambda", "must be > 0"));
            }
            if !(0.0..=1.0).contains(&m.p) {
                return Err(Error::config("mbart.p", "must be in [0, 1]"));
            }
            m.train.validate().map_err(|e| e.at("mbart.train"))?;
        }
        self.s2ut.train.validate().map_err(|e| e.at("s2ut.train"))?;
        for (k, a) in self.s2ut.aux.iter().enumerate() {
            if a.layer >= self.model.enc_layers {
                return Err(Error::config(format!("s2ut.aux[{k}].layer"), "must be below model.enc_layers"));
            }
        }
        if self.pretrained.encoder && self.w2v.is_none() {
            return Err(Error::config("pretrained.encoder", "needs a w2v section"));
        }
        if self.pretrained.decoder && self.mbart.is_none() {
            return Err(Error::config("pretrained.decoder", "needs an mbart section"));
        }
        if (self.pretrained.encoder || self.pretrained.decoder) && self.s2ut.strategy.is_none() {
            return Err(Error::config("s2ut.strategy", "finetuning pretrained weights needs a strategy"));
        }
        if self.weak {
            for (name, s) in [("source_asr", &self.source_asr), ("mt", &self.mt), ("t2u", &self.t2u)] {
                if s.is_none() {
                    return Err(Error::config(name, "weak supervision needs this section"));
                }
            }
            if self.data.n_source_only == 0 {
                return Err(Error::config("data.n_source_only", "weak supervision needs source-only speech"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::config("train_fraction", "must be in (0, 1]"));
        }
        for (name, b) in [("eval.dev_beam", &self.eval.dev_beam), ("eval.test_beam", &self.eval.test_beam)] {
            if b.beam_size == 0 || b.max_len == 0 {
                return Err(Error::config(name, "beam_size and max_len must be >= 1"));
            }
        }
        if self.sweep.lambda.is_empty() || self.sweep.p.is_empty() {
            return Err(Error::config("sweep", "grid axes must be non-empty"));
        }
        Ok(())
    }

    /// Training seed of `stage`, derived from the recipe seed and the
    /// stage's own seed.
    pub fn stage_seed(&self, stage: &str, own: u64) -> u64 {
        RngStream::new(self.seed).split_str(stage).split(own).next_u64()
    }
}
