//! TOML run configuration. Every key is optional; command-line flags (and
//! their `GEOECON_*` environment variables) override the file.

use std::path::{Path, PathBuf};

use geoecon_core::eval::Normalization;
use geoecon_core::features::{parse_specs, EscalationMode, FeatureConfig};
use geoecon_core::learners::{ForestParams, GbParams};
use geoecon_core::select::SelectionParams;
use geoecon_core::synthworld::WorldConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub sample: Option<String>,
    /// Normalize every sample's MAE by the SD of the full target.
    pub global_sd: Option<bool>,
    pub folds: Option<usize>,
    pub world: WorldConfig,
    pub inputs: Inputs,
    pub features: FeatureSection,
    /// `quick` or `full` (default).
    pub selection_profile: Option<String>,
    /// Overrides applied on top of the selection profile.
    pub selection: toml::Table,
    pub rf: ForestParams,
    pub gb: GbParams,
}

/// Source files for `ingest`; default to the `synth` output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub cells: Option<PathBuf>,
    pub economy: Option<PathBuf>,
    pub series_dir: Option<PathBuf>,
    /// Economy years; defaults to `world.years`.
    pub years: Option<Vec<i32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// Predictor names; all defaults when absent.
    pub predictors: Option<Vec<String>>,
    pub escalation: EscalationMode,
    pub max_missing_fraction: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        let d = FeatureConfig::default();
        FeatureSection {
            predictors: None,
            escalation: d.escalation,
            max_missing_fraction: d.max_missing_fraction,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingInput(path.to_path_buf()),
            _ => CliError::Internal(format!("{}: {e}", path.display())),
        })?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {}", path.display(), e.message())))
    }

    pub fn years(&self) -> Vec<i32> {
        self.inputs.years.clone().unwrap_or_else(|| self.world.years.clone())
    }

    pub fn normalization(&self) -> Normalization {
        if self.global_sd.unwrap_or(false) {
            Normalization::Global
        } else {
            Normalization::PerSample
        }
    }

    pub fn feature_config(&self) -> CliResult<FeatureConfig> {
        let mut cfg = FeatureConfig {
            escalation: self.features.escalation,
            max_missing_fraction: self.features.max_missing_fraction,
            ..Default::default()
        };
        if let Some(names) = &self.features.predictors {
            cfg.specs = parse_specs(names)?;
        }
        Ok(cfg)
    }

    /// Selection parameters: profile, then `[selection]` overrides, then the
    /// run seed unless the table sets one.
    pub fn selection_params(&self, quick: bool, seed: u64) -> CliResult<SelectionParams> {
        let profile = match (quick, self.selection_profile.as_deref()) {
            (true, _) | (false, Some("quick")) => SelectionParams::quick(),
            (false, None | Some("full")) => SelectionParams::default(),
            (false, Some(other)) => {
                return Err(CliError::Validation(format!("unknown selection_profile '{other}'")));
            }
        };
        let mut table = toml::Table::try_from(&profile).map_err(|e| CliError::Internal(e.to_string()))?;
        if !self.selection.contains_key("seed") {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        for (k, v) in &self.selection {
            if !table.contains_key(k) {
                return Err(CliError::Validation(format!("unknown [selection] key '{k}'")));
            }
            table.insert(k.clone(), v.clone());
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("[selection]: {}", e.message())))
    }
}
