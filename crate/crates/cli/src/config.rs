//! JSON run configuration. Every section is optional; command-line flags
//! override whatever the file sets.

use std::path::Path;

use mseg_core::cohort::PhantomConfig;
use mseg_core::metrics::Connectivity;
use mseg_core::model::ArchConfig;
use mseg_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: PhantomConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fixed operating threshold; `None` calibrates on the dev split.
    pub threshold: Option<f64>,
    pub connectivity: Connectivity,
    pub min_mm3: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: None,
            connectivity: Connectivity::TwentySix,
            min_mm3: 10.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> CliResult<()> {
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return invalid(format!("threshold {t} outside [0, 1]"));
            }
        }
        if !(self.min_mm3.is_finite() && self.min_mm3 >= 0.0) {
            return invalid(format!("min_mm3 {} must be finite and non-negative", self.min_mm3));
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}
