//! JSON run configuration shared by the `split`, `train` and `grid` commands.

use std::path::Path;

use apex_core::data::{FilterRules, DEFAULT_FRACTIONS, DEFAULT_STRATA};
use apex_core::preference::LogRegConfig;
use apex_core::scores::default_alpha;
use apex_core::trainer::{GridAxes, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{fsutil, AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Train, test, validation.
    pub fractions: [f64; 3],
    pub n_strata: usize,
    pub filter: FilterRules,
    /// Exponent of the score power transform.
    pub alpha: f64,
    /// Stratified downsample of the filtered songs before splitting.
    pub downsample: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS,
            n_strata: DEFAULT_STRATA,
            filter: FilterRules::default(),
            alpha: default_alpha(),
            downsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub axes: GridAxes,
    pub preference: PreferenceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            train: TrainConfig::default(),
            axes: GridAxes::full(),
            preference: PreferenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreferenceConfig {
    pub folds: usize,
    pub logreg: LogRegConfig,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            logreg: LogRegConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = fsutil::read_string(path)?;
        serde_json::from_str(&text).map_err(|e| AppError::format(path, e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
