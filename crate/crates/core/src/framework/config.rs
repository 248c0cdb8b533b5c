use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ReaderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Lp,
    Nli,
    Qa,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Lp => "lp",
            Task::Nli => "nli",
            Task::Qa => "qa",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = ReaderError;

    fn from_str(s: &str) -> Result<Self, ReaderError> {
        match s {
            "lp" => Ok(Task::Lp),
            "nli" => Ok(Task::Nli),
            "qa" => Ok(Task::Qa),
            other => Err(ReaderError::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpKind {
    DistMult,
    ComplEx,
}

impl fmt::Display for LpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LpKind::DistMult => "distmult",
            LpKind::ComplEx => "complex",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpConfig {
    pub kind: LpKind,
    pub dim: usize,
    pub negatives: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            kind: LpKind::DistMult,
            dim: 128,
            negatives: 1,
        }
    }
}

/// Settings shared by every task. The same schema is read from the
/// training config file and written next to saved models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReaderConfig {
    pub batch_size: usize,
    pub repr_dim: usize,
    pub repr_dim_input: usize,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: usize,
    pub lowercase: bool,
    /// Iterations between loss-hook lines.
    pub log_interval: usize,
    /// Architecture file for the text tasks, relative to the config file.
    pub arch: Option<String>,
    /// Optional `word v1 .. vd` embedding file.
    pub embeddings: Option<String>,
    pub lp: LpConfig,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            repr_dim: 128,
            repr_dim_input: 128,
            seed: 1337,
            epochs: 10,
            learning_rate: 1e-3,
            min_count: 1,
            lowercase: false,
            log_interval: 10,
            arch: None,
            embeddings: None,
            lp: LpConfig::default(),
        }
    }
}

impl ReaderConfig {
    pub fn from_toml(text: &str) -> Result<Self, ReaderError> {
        let c: ReaderConfig =
            toml::from_str(text).map_err(|e| ReaderError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ReaderError> {
        let positive = [
            ("batch_size", self.batch_size),
            ("repr_dim", self.repr_dim),
            ("repr_dim_input", self.repr_dim_input),
            ("log_interval", self.log_interval),
            ("lp.dim", self.lp.dim),
            ("lp.negatives", self.lp.negatives),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ReaderError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ReaderError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}
