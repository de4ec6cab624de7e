//! TOML configuration files.
//!
//! One schema covers every command; each command reads the sections it
//! needs:
//!
//! ```toml
//! schema_version = 1
//!
//! [cluster]
//! num_devices = 8
//! avg_bandwidth = 1e10        # bytes/s
//! compute_throughput = 3e5    # inputs/s per device
//!
//! [model]
//! num_experts = 8
//! num_blocks = 4
//! top_k = 1
//! input_bytes = 4096
//! expert_param_bytes = 6.7e7
//! expert_grad_bytes = 6.7e7
//! fnec_time = 0.002
//! bnec_time = 0.004
//!
//! [generator]
//! devices = 8
//! experts = 8
//! inputs_per_iteration = 16384
//! skew = 1.3                  # optional, defaults to the calibrated value
//! drift = 0.05
//! seed = 7
//! iterations = 100            # optional
//! layers = 4                  # optional
//!
//! [planner]                   # optional
//! n = 1
//! alpha = 0.1
//! reuse_interval = 1
//!
//! [sim]                       # optional
//! plan_fraction = 0.5
//! ```

use std::path::Path;

use moebal_core::simulator::SimConfig;
use moebal_core::workload::CALIBRATED_SKEW;
use moebal_core::{ClusterSpec, GeneratorConfig, ModelSpec, PlannerConfig};
use serde::Deserialize;

use crate::Fail;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub cluster: Option<ClusterSpec>,
    pub model: Option<ModelSpec>,
    pub generator: Option<GeneratorSection>,
    pub planner: Option<PlannerConfig>,
    pub sim: Option<SimConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub devices: usize,
    pub experts: usize,
    pub inputs_per_iteration: u64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_skew")]
    pub skew: f64,
    pub drift: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
}

fn default_top_k() -> usize {
    1
}

fn default_skew() -> f64 {
    CALIBRATED_SKEW
}

fn default_iterations() -> usize {
    100
}

fn default_layers() -> usize {
    1
}

impl GeneratorSection {
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            devices: self.devices,
            experts: self.experts,
            inputs_per_iteration: self.inputs_per_iteration,
            top_k: self.top_k,
            skew: self.skew,
            drift: self.drift,
            seed: self.seed,
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, Fail> {
        let text = std::fs::read_to_string(path).map_err(|e| Fail::io(format!("{}: {e}", path.display())))?;
        let cfg: ConfigFile =
            toml::from_str(&text).map_err(|e| Fail::validation(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Fail::validation(format!(
                "{}: schema_version: expected {SCHEMA_VERSION}, found {}",
                path.display(),
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn require<'a, T>(section: &'a Option<T>, name: &str, path: &Path) -> Result<&'a T, Fail> {
        section.as_ref().ok_or_else(|| Fail::validation(format!("{}: missing [{name}] section", path.display())))
    }
}
