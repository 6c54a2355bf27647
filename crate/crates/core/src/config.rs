//! Flat `key=value` run configuration shared by every command.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::cnn::{AdamConfig, TrainConfig};
use crate::dataset::SplitConfig;
use crate::ekm::{EkmParams, GenerationConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatabaseKind {
    Wfdb,
    Plaintext,
    Synthetic,
}

impl fmt::Display for DatabaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Wfdb => "wfdb",
            Self::Plaintext => "plaintext",
            Self::Synthetic => "synthetic",
        })
    }
}

impl FromStr for DatabaseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wfdb" => Ok(Self::Wfdb),
            "plaintext" => Ok(Self::Plaintext),
            "synthetic" => Ok(Self::Synthetic),
            _ => Err("expected wfdb, plaintext or synthetic".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub database: DatabaseKind,
    /// Name used in reports (e.g. `nsrdb`).
    pub name: String,
    pub input: Option<PathBuf>,
    pub channel: usize,
    /// Sampling rate for plain-text and synthetic input; WFDB uses the header.
    pub fs: f64,
    pub plaintext_column: usize,
    /// Comment substrings a WFDB record must match; empty keeps everything.
    pub pathology: Vec<String>,
    pub verify_checksum: bool,
    pub synth_subjects: usize,
    pub synth_duration: f64,
    pub ekm: EkmParams,
    pub generation: GenerationConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub dropout: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 42;
        Self {
            database: DatabaseKind::Synthetic,
            name: "synthetic".into(),
            input: None,
            channel: 0,
            fs: 360.0,
            plaintext_column: 0,
            pathology: Vec::new(),
            verify_checksum: false,
            synth_subjects: 5,
            synth_duration: 600.0,
            ekm: EkmParams::default(),
            generation: GenerationConfig::default(),
            split: SplitConfig {
                seed,
                ..SplitConfig::default()
            },
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            dropout: 0.25,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    match value {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn opt_str<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// Set one key. `seed` drives the split, the training order and the
    /// synthetic generator together.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "database" => {
                self.database = value.parse().map_err(|reason| ConfigError::InvalidValue {
                    key: key.into(),
                    value: value.into(),
                    reason,
                })?
            }
            "name" => self.name = value.to_string(),
            "input" => self.input = (!value.is_empty() && value != "none").then(|| PathBuf::from(value)),
            "channel" => self.channel = parse(key, value)?,
            "fs" => self.fs = parse(key, value)?,
            "plaintext_column" => self.plaintext_column = parse(key, value)?,
            "pathology" => {
                self.pathology = value
                    .split(',')
                    .map(|s| s.trim().to_lowercase())
                    .filter(|s| !s.is_empty() && s != "none")
                    .collect()
            }
            "verify_checksum" => self.verify_checksum = parse(key, value)?,
            "synth_subjects" => self.synth_subjects = parse(key, value)?,
            "synth_duration" => self.synth_duration = parse(key, value)?,
            "bpf" => self.ekm.bpf = parse(key, value)?,
            "alpha_i" => self.ekm.alpha_i = parse(key, value)?,
            "alpha_e" => self.ekm.alpha_e = parse(key, value)?,
            "cap" => self.generation.cap_per_subject = parse_opt(key, value)?,
            "image_h" => self.generation.out_h = parse(key, value)?,
            "image_w" => self.generation.out_w = parse(key, value)?,
            "train_fraction" => {
                let v = parse(key, value)?;
                self.generation.train_fraction = v;
                self.split.train_fraction = v;
            }
            "validation_fraction" => self.split.validation_fraction = parse(key, value)?,
            "seed" => {
                let v = parse(key, value)?;
                self.split.seed = v;
                self.train.seed = v;
            }
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch" => self.train.batch_size = parse(key, value)?,
            "steps_per_epoch" => self.train.steps_per_epoch = parse_opt(key, value)?,
            "learning_rate" => self.train.adam.learning_rate = parse(key, value)?,
            "beta1" => self.train.adam.beta1 = parse(key, value)?,
            "beta2" => self.train.adam.beta2 = parse(key, value)?,
            "epsilon" => self.train.adam.epsilon = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.train.adam;
        let kv = [
            ("database", self.database.to_string()),
            ("name", self.name.clone()),
            ("input", self.input.as_ref().map_or("none".into(), |p| p.display().to_string())),
            ("channel", self.channel.to_string()),
            ("fs", self.fs.to_string()),
            ("plaintext_column", self.plaintext_column.to_string()),
            ("pathology", if self.pathology.is_empty() { "none".into() } else { self.pathology.join(",") }),
            ("verify_checksum", self.verify_checksum.to_string()),
            ("synth_subjects", self.synth_subjects.to_string()),
            ("synth_duration", self.synth_duration.to_string()),
            ("bpf", self.ekm.bpf.to_string()),
            ("alpha_i", self.ekm.alpha_i.to_string()),
            ("alpha_e", self.ekm.alpha_e.to_string()),
            ("cap", opt_str(self.generation.cap_per_subject)),
            ("image_h", self.generation.out_h.to_string()),
            ("image_w", self.generation.out_w.to_string()),
            ("train_fraction", self.split.train_fraction.to_string()),
            ("validation_fraction", self.split.validation_fraction.to_string()),
            ("seed", self.seed().to_string()),
            ("epochs", self.train.epochs.to_string()),
            ("batch", self.train.batch_size.to_string()),
            ("steps_per_epoch", opt_str(self.train.steps_per_epoch)),
            ("learning_rate", learning_rate.to_string()),
            ("beta1", beta1.to_string()),
            ("beta2", beta2.to_string()),
            ("epsilon", epsilon.to_string()),
            ("dropout", self.dropout.to_string()),
        ];
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Apply `key=value` lines on top of `self`; blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: line.to_string(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.ekm.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.split.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.generation.out_h == 0 || self.generation.out_w == 0 {
            return invalid("image dimensions must be positive".into());
        }
        if self.generation.cap_per_subject == Some(0) {
            return invalid("cap must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.fs > 0.0) {
            return invalid(format!("fs must be positive, got {}", self.fs));
        }
        match self.database {
            DatabaseKind::Synthetic => {
                if self.synth_subjects < 2 {
                    return invalid("synthetic database needs at least 2 subjects".into());
                }
                if !(self.synth_duration > 0.0) {
                    return invalid("synthetic duration must be positive".into());
                }
            }
            DatabaseKind::Wfdb | DatabaseKind::Plaintext => match &self.input {
                None => return invalid(format!("{} database needs an input path", self.database)),
                Some(p) if !p.exists() => return invalid(format!("input path {} does not exist", p.display())),
                Some(_) => {}
            },
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("bpf", "7").unwrap();
        cfg.set("cap", "300").unwrap();
        cfg.set("pathology", "Myocarditis, cardiomyopathy").unwrap();
        cfg.set("seed", "7").unwrap();
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
        assert_eq!(back.split.seed, 7);
        assert_eq!(back.pathology, vec!["myocarditis", "cardiomyopathy"]);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = RunConfig::from_text("# comment\n\nepochs = 3\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert!(matches!(RunConfig::from_text("epochs"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::from_text("colour=red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::from_text("bpf=three"), Err(ConfigError::InvalidValue { .. })));
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let cfg = RunConfig::from_text("alpha_i=0.8\nalpha_e=0.8").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_text("database=wfdb").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_text("database=wfdb\ninput=/definitely/not/here").unwrap();
        assert!(cfg.validate().is_err());
    }
}
