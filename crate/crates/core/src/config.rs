//! Run configuration: one flat key set, loadable from TOML, every key
//! overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::PlanParams;
use crate::decoder::{DecoderConfig, DecoderMode, DEFAULT_MAX_TOKENS, DEFAULT_ROLLOUTS};
use crate::model::{DEFAULT_ALPHA, DEFAULT_ORDER};
use crate::task::Split;

pub const DEFAULT_TEMPERATURE: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Whole sessions; decoded with rollouts search.
    Rollouts,
    /// First instruction paired with the final code only.
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Task registry file; the built-in registry when absent.
    pub task_registry: Option<PathBuf>,
    /// Restrict to one embodiment.
    pub embodiment: Option<String>,

    pub sessions: usize,
    pub collect_split: Split,
    /// Model spec used for collection, `bootstrap` or `name:decoder:path`.
    pub collect_model: String,
    pub eval_sessions: usize,
    pub eval_split: Split,
    /// Model specs `name:decoder:path` compared during evaluation.
    pub models: Vec<String>,
    pub workers: usize,

    pub order: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub rollouts: usize,
    pub max_tokens: usize,

    pub objective: Objective,
    pub augment_k: usize,
    pub top_user_conditioning: bool,
    pub top_percentile: f64,
    pub include_failures: bool,

    pub horizon: usize,
    pub samples: usize,
    pub noise_sigma: f64,
    pub control_steps_max: usize,
    pub transition_timeout: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PlanParams::default();
        Self {
            seed: 0,
            output_dir: PathBuf::from("lmpc-out"),
            task_registry: None,
            embodiment: None,
            sessions: 300,
            collect_split: Split::Train,
            collect_model: "bootstrap".into(),
            eval_sessions: 400,
            eval_split: Split::Test,
            models: Vec::new(),
            workers: 1,
            order: DEFAULT_ORDER,
            alpha: DEFAULT_ALPHA,
            temperature: DEFAULT_TEMPERATURE,
            rollouts: DEFAULT_ROLLOUTS,
            max_tokens: DEFAULT_MAX_TOKENS,
            objective: Objective::Rollouts,
            augment_k: crate::data::DEFAULT_AUGMENT_K,
            top_user_conditioning: true,
            top_percentile: crate::data::DEFAULT_TOP_PERCENTILE,
            include_failures: false,
            horizon: p.horizon,
            samples: p.samples,
            noise_sigma: p.noise_sigma,
            control_steps_max: p.control_steps_max,
            transition_timeout: p.transition_timeout,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    Rollouts,
    Skip,
    /// Rollouts search that ignores predicted failures.
    Filtered,
    /// Single sample with retrieved exemplars in the prompt.
    Rag,
}

impl DecoderKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rollouts" => Some(Self::Rollouts),
            "skip" => Some(Self::Skip),
            "filtered" => Some(Self::Filtered),
            "rag" => Some(Self::Rag),
            _ => None,
        }
    }
}

/// `name:decoder:path`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: String,
    pub decoder: DecoderKind,
    pub path: PathBuf,
}

impl ModelSpec {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let mut it = s.splitn(3, ':');
        let (name, dec, path) = match (it.next(), it.next(), it.next()) {
            (Some(n), Some(d), Some(p)) if !n.is_empty() && !p.is_empty() => (n, d, p),
            _ => return Err(ConfigError::Invalid(format!("model spec `{s}` is not name:decoder:path"))),
        };
        let decoder =
            DecoderKind::parse(dec).ok_or_else(|| ConfigError::Invalid(format!("unknown decoder `{dec}` in `{s}`")))?;
        Ok(Self { name: name.to_owned(), decoder, path: PathBuf::from(path) })
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_owned()));
        if self.order < 2 {
            return bad("order must be at least 2");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.rollouts == 0 {
            return bad("rollouts must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(0.0..=100.0).contains(&self.top_percentile) {
            return bad("top-percentile must be within 0..=100");
        }
        self.plan_params().validate().map_err(ConfigError::Invalid)?;
        for m in &self.models {
            ModelSpec::parse(m)?;
        }
        if self.collect_model != "bootstrap" {
            ModelSpec::parse(&self.collect_model)?;
        }
        Ok(())
    }

    pub fn plan_params(&self) -> PlanParams {
        PlanParams {
            horizon: self.horizon,
            samples: self.samples,
            noise_sigma: self.noise_sigma,
            control_steps_max: self.control_steps_max,
            transition_timeout: self.transition_timeout,
            seed: self.seed,
        }
    }

    pub fn decoder(&self, kind: DecoderKind) -> DecoderConfig {
        let mode = match kind {
            DecoderKind::Rollouts | DecoderKind::Filtered => DecoderMode::Rollouts { k: self.rollouts },
            DecoderKind::Skip | DecoderKind::Rag => DecoderMode::Skip,
        };
        DecoderConfig {
            mode,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            filter_failures: kind == DecoderKind::Filtered,
        }
    }

    pub fn model_specs(&self) -> Result<Vec<ModelSpec>, ConfigError> {
        self.models.iter().map(|m| ModelSpec::parse(m)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn partial_file_and_unknown_key() {
        let c = RunConfig::from_toml_str("seed = 9\naugment-k = 0\n").unwrap();
        assert_eq!((c.seed, c.augment_k, c.order), (9, 0, 4));
        assert!(RunConfig::from_toml_str("sead = 1").is_err());
    }

    #[test]
    fn model_specs() {
        let m = ModelSpec::parse("a:skip:/tmp/x.ngram").unwrap();
        assert_eq!(m.decoder, DecoderKind::Skip);
        assert!(ModelSpec::parse("a:beam:/x").is_err());
        assert!(ModelSpec::parse("a").is_err());
    }
}
