//! Run configuration: one TOML file with a table per stage. Every table and
//! key is optional; command-line flags override file values.

use std::path::Path;

use cloudop_core::bench::ScalingConfig;
use cloudop_core::cloudgen::SamplingConfig;
use cloudop_core::fieldgen::CaseConfig;
use cloudop_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    /// Flow angles in degrees.
    pub angles: Vec<f64>,
    /// Observer frame rotation in degrees.
    pub frame_rotation: f64,
    /// Rotate each snapshot's frame by its own flow angle.
    pub rotate_by_angle: bool,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            angles: vec![10.0, 20.0, 30.0],
            frame_rotation: 0.0,
            rotate_by_angle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Network scalar type used for training.
    pub precision: Precision,
    pub case: CaseConfig,
    pub flow: FlowSection,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    pub bench: ScalingConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
