//! TOML run files shared by the `train` and `sweep` commands. Every key is
//! optional; command-line flags take precedence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mara::AnchorTiebreak;
use crate::trainer::{AdamParams, Baseline, ForwardRegularizer};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    /// Builtin scenario name or path to a scenario TOML.
    pub scenario: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<String>,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub train: TrainSection,
    pub mara: Option<MaraSection>,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub kind: Option<String>,
    pub beta: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Option<ModeName>,
    pub batch: Option<usize>,
    pub baseline: Option<Baseline>,
    pub steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub forward_regularizer: Option<ForwardRegularizer>,
    pub adam: Option<AdamParams>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaraSection {
    pub tau: Option<f64>,
    pub percentile: Option<f64>,
    #[serde(default)]
    pub tiebreak: AnchorTiebreak,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub objectives: Option<Vec<String>>,
    pub betas: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub timing: bool,
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(m) = &file.mara {
            if m.tau.is_some() == m.percentile.is_some() {
                return Err(Error::Parse("[mara] needs exactly one of `tau` or `percentile`".into()));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
