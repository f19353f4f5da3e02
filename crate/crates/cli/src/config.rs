//! Run configuration files: UTF-8 lines of `key = value`, `#` starts a
//! comment, blank lines are ignored. Unknown and repeated keys are errors.
//!
//! ```text
//! seed = 7
//! data_dir = data
//! epochs = 30
//! learning_rate = 0.1
//! stage1.base_channels = 8
//! synth.count = 60
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dsfcn::cascade::CascadeConfig;
use dsfcn::classifier::Objective;
use dsfcn::data::{AugmentPolicy, SynthConfig};
use dsfcn::grad::SgdConfig;
use dsfcn::model::FcnConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Read { path: PathBuf, msg: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key '{key}' given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value '{value}' for '{key}': {msg}")]
    Value { line: usize, key: String, value: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub stage1_checkpoint: Option<PathBuf>,
    pub stage2_checkpoint: Option<PathBuf>,
    pub stage1: FcnConfig,
    pub stage2: FcnConfig,
    pub sgd: SgdConfig,
    pub cascade: CascadeConfig,
    /// `None` trains without augmentation.
    pub augment: Option<AugmentPolicy>,
    pub synth: SynthConfig,
    pub objective: Objective,
    /// Mandatory before any command runs; there is no clock-based fallback.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            out_dir: None,
            stage1_checkpoint: None,
            stage2_checkpoint: None,
            stage1: FcnConfig::stage1(),
            stage2: FcnConfig::stage2(),
            sgd: SgdConfig::default(),
            cascade: CascadeConfig::desk(),
            augment: Some(AugmentPolicy::default()),
            synth: SynthConfig::default(),
            objective: Objective::SquaredError,
            seed: None,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        line,
        key: key.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Value {
            line,
            key: key.into(),
            value: value.into(),
            msg: "expected true or false".into(),
        }),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected 'key = value', got '{content}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line, msg: "empty key".into() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        let k = key;
        match key {
            "data_dir" => self.data_dir = Some(v.into()),
            "out_dir" => self.out_dir = Some(v.into()),
            "stage1_checkpoint" => self.stage1_checkpoint = Some(v.into()),
            "stage2_checkpoint" => self.stage2_checkpoint = Some(v.into()),
            "seed" => self.seed = Some(parse(line, k, v)?),
            "learning_rate" => self.sgd.learning_rate = parse(line, k, v)?,
            "epochs" => self.sgd.epochs = parse(line, k, v)?,
            "batch_size" => self.sgd.batch_size = parse(line, k, v)?,
            "augment" => {
                self.augment = parse_bool(line, k, v)?.then(AugmentPolicy::default);
            }
            "target" => self.cascade.target = parse(line, k, v)?,
            "stage2_size" => self.cascade.stage2_size = parse(line, k, v)?,
            "threshold" => self.cascade.threshold = parse(line, k, v)?,
            "margin_frac" => self.cascade.margin_frac = parse(line, k, v)?,
            "objective" => {
                self.objective = match v {
                    "squared_error" => Objective::SquaredError,
                    "log_likelihood" => Objective::LogLikelihood,
                    _ => {
                        return Err(ConfigError::Value {
                            line,
                            key: k.into(),
                            value: v.into(),
                            msg: "expected squared_error or log_likelihood".into(),
                        })
                    }
                }
            }
            "synth.count" => self.synth.count = parse(line, k, v)?,
            "synth.size" => self.synth.size = parse(line, k, v)?,
            "synth.disk_radius_min" => self.synth.disk_radius.0 = parse(line, k, v)?,
            "synth.disk_radius_max" => self.synth.disk_radius.1 = parse(line, k, v)?,
            "synth.normal_ratio_min" => self.synth.normal_ratio.0 = parse(line, k, v)?,
            "synth.normal_ratio_max" => self.synth.normal_ratio.1 = parse(line, k, v)?,
            "synth.glaucoma_ratio_min" => self.synth.glaucoma_ratio.0 = parse(line, k, v)?,
            "synth.glaucoma_ratio_max" => self.synth.glaucoma_ratio.1 = parse(line, k, v)?,
            "synth.glaucoma_fraction" => self.synth.glaucoma_fraction = parse(line, k, v)?,
            "synth.noise" => self.synth.noise = parse(line, k, v)?,
            "synth.vessels" => self.synth.vessels = parse(line, k, v)?,
            _ => {
                let (stage, field) = match key.split_once('.') {
                    Some(("stage1", f)) => (&mut self.stage1, f),
                    Some(("stage2", f)) => (&mut self.stage2, f),
                    _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
                };
                match field {
                    "base_channels" => stage.base_channels = parse(line, k, v)?,
                    "num_scales" => stage.num_scales = parse(line, k, v)?,
                    "blocks_per_scale" => stage.blocks_per_scale = parse(line, k, v)?,
                    _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: dsfcn::Error| ConfigError::Invalid(e.to_string());
        self.stage1.validate().map_err(invalid)?;
        self.stage2.validate().map_err(invalid)?;
        self.sgd.validate().map_err(|e| invalid(e.into()))?;
        self.cascade.validate().map_err(invalid)?;
        self.synth.validate().map_err(invalid)?;
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            let size = if name == "stage1" { self.cascade.target } else { self.cascade.stage2_size };
            if size % s.divisor() != 0 {
                return Err(ConfigError::Invalid(format!(
                    "{name} input size {size} is not divisible by 2^{}",
                    s.num_scales
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let cfg = RunConfig::parse(
            "# run\nseed = 9\n\nepochs = 3   # short\nstage2.base_channels=4\naugment = false\nobjective = log_likelihood\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.sgd.epochs, 3);
        assert_eq!(cfg.stage2.base_channels, 4);
        assert_eq!(cfg.stage2.in_channels, 3);
        assert_eq!(cfg.augment, None);
        assert_eq!(cfg.objective, Objective::LogLikelihood);
    }

    #[test]
    fn rejects_unknown_and_repeated_keys() {
        assert!(matches!(RunConfig::parse("epoch = 3"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(RunConfig::parse("stage3.num_scales = 1"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(RunConfig::parse("seed = 1\nseed = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
    }

    #[test]
    fn rejects_malformed_lines_and_values() {
        assert!(matches!(RunConfig::parse("seed 4"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(RunConfig::parse("epochs = many"), Err(ConfigError::Value { .. })));
        assert!(matches!(RunConfig::parse("learning_rate = -1"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("target = 100"), Err(ConfigError::Invalid(_))));
    }
}
