//! Run configuration: plain-text key=value files with CLI override.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad value for '{key}': {reason}")]
    BadValue { key: String, reason: String },
    #[error("malformed line {line} in {file}: expected key=value")]
    MalformedLine { file: String, line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub d_z: usize,
    pub hidden: usize,
    /// 0 means the per-query default ceil(n/2)
    pub kappa: usize,
    pub budget_fraction: f64,
    pub batch_size: usize,
    pub splits: usize,
    pub seg_len: usize,
    pub single_stage: bool,
    pub mc_kl: bool,
    pub weak_supervision: bool,
    pub multimodal: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 60,
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            d_z: 16,
            hidden: 64,
            kappa: 0,
            budget_fraction: 0.15,
            batch_size: 32,
            splits: 5,
            seg_len: 2,
            single_stage: false,
            mc_kl: false,
            weak_supervision: false,
            multimodal: false,
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "epochs={}", self.epochs)?;
        writeln!(f, "learning_rate={}", self.learning_rate)?;
        writeln!(f, "beta1={}", self.beta1)?;
        writeln!(f, "beta2={}", self.beta2)?;
        writeln!(f, "epsilon={}", self.epsilon)?;
        writeln!(f, "d_z={}", self.d_z)?;
        writeln!(f, "hidden={}", self.hidden)?;
        writeln!(f, "kappa={}", self.kappa)?;
        writeln!(f, "budget_fraction={}", self.budget_fraction)?;
        writeln!(f, "batch_size={}", self.batch_size)?;
        writeln!(f, "splits={}", self.splits)?;
        writeln!(f, "seg_len={}", self.seg_len)?;
        writeln!(f, "single_stage={}", self.single_stage)?;
        writeln!(f, "mc_kl={}", self.mc_kl)?;
        writeln!(f, "weak_supervision={}", self.weak_supervision)?;
        write!(f, "multimodal={}", self.multimodal)
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            v.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                reason: e.to_string(),
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "d_z" => self.d_z = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "kappa" => self.kappa = parse(key, value)?,
            "budget_fraction" => self.budget_fraction = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "splits" => self.splits = parse(key, value)?,
            "seg_len" => self.seg_len = parse(key, value)?,
            "single_stage" => self.single_stage = parse(key, value)?,
            "mc_kl" => self.mc_kl = parse(key, value)?,
            "weak_supervision" => self.weak_supervision = parse(key, value)?,
            "multimodal" => self.multimodal = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::MalformedLine {
                file: path.display().to_string(),
                line: i + 1,
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: &str| {
            Err(ConfigError::BadValue { key: key.to_string(), reason: reason.to_string() })
        };
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return bad("learning_rate", "must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon", "must be positive");
        }
        if self.d_z == 0 || self.hidden == 0 {
            return bad("d_z", "d_z and hidden must be positive");
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return bad("budget_fraction", "must lie in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.splits == 0 {
            return bad("splits", "must be positive");
        }
        if self.seg_len == 0 {
            return bad("seg_len", "must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_match_training_constants() {
        let c = RunConfig::default();
        assert_eq!(c.epochs, 60);
        assert_eq!(c.learning_rate, 1e-6);
        assert_eq!(c.budget_fraction, 0.15);
        assert_eq!(c.splits, 5);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("learning_rte", "0.1"), Err(ConfigError::UnknownKey(_))));
    }

    #[test]
    fn file_parse_and_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# comment\nseed=9\nlearning_rate = 0.001\nmc_kl=true\n").unwrap();
        drop(f);
        let mut c = RunConfig::load_file(&path).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.learning_rate, 1e-3);
        assert!(c.mc_kl);
        c.set("seed", "11").unwrap();
        assert_eq!(c.seed, 11);
    }

    #[test]
    fn malformed_line_names_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "seed=1\nnot a pair\n").unwrap();
        match RunConfig::load_file(&path) {
            Err(ConfigError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn out_of_range_values_rejected() {
        let mut c = RunConfig::default();
        c.beta1 = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.budget_fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.learning_rate = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn display_round_trips_through_set() {
        let mut c = RunConfig::default();
        c.seed = 5;
        c.mc_kl = true;
        let text = c.to_string();
        let mut d = RunConfig::default();
        for line in text.lines() {
            let (k, v) = line.split_once('=').unwrap();
            d.set(k, v).unwrap();
        }
        assert_eq!(c, d);
    }
}
