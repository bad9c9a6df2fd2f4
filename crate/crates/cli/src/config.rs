//! Run configuration read from a JSON document.

use std::path::{Path, PathBuf};

use fluidq_core::{ModelParams, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

fn default_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Buffer-1 query levels; a default grid around `x*` when empty.
    #[serde(default)]
    pub x_grid: Vec<f64>,
    /// Buffer-2 query levels.
    #[serde(default)]
    pub y_grid: Vec<f64>,
    #[serde(default)]
    pub grid_points: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { tol: default_tol(), x_grid: Vec::new(), y_grid: Vec::new(), grid_points: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub simulation: Option<SimConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::from_json(&text)
    }

    pub fn x_grid(&self) -> Vec<f64> {
        if !self.analysis.x_grid.is_empty() {
            return self.analysis.x_grid.clone();
        }
        let xs = self.model.x_star;
        let top = self.model.v.unwrap_or(f64::INFINITY);
        [0.5, 1.0, 2.0, 4.0].iter().map(|k| k * xs).filter(|&x| x < top).collect()
    }

    pub fn y_grid(&self) -> Vec<f64> {
        if self.analysis.y_grid.is_empty() {
            vec![1.0, 2.0, 4.0, 8.0]
        } else {
            self.analysis.y_grid.clone()
        }
    }

    /// Simulation settings with empty grids filled from the analysis grids.
    pub fn sim_config(&self) -> SimConfig {
        let mut cfg = self.simulation.clone().unwrap_or_else(|| SimConfig::new(1e5, 0));
        if cfg.x_grid.is_empty() {
            cfg.x_grid = self.x_grid();
        }
        if cfg.y_grid.is_empty() {
            cfg.y_grid = self.y_grid();
        }
        cfg
    }
}
