//! Layered JSON run configuration.

use std::path::Path;

use amc_core::agent::{Ablations, AgentConfig, RunSpec};
use amc_core::envs::SuiteSpec;
use amc_core::memory::{Capacities, NeighborTarget, SamplingConfig, Thresholds};
use amc_core::sde::SdeParams;
use amc_core::utility::UtilityWeights;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceConfig {
    /// Radius as a fraction of the stored-state diameter.
    pub epsilon_fraction: f64,
    /// Reward gap as a fraction of `R_max`.
    pub delta_r_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub horizon: u64,
    pub c0: f64,
    pub utility: f64,
    pub interference: f64,
    pub checkpoints: usize,
    /// Allowed gap between the terminal mean and the stationary mean.
    pub mean_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDensity {
    Uniform,
    Bump { centre: f64, width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpConfig {
    pub nodes: usize,
    pub t_final: f64,
    pub u_bar: f64,
    pub i_bar: f64,
    pub initial: InitialDensity,
    /// Largest accepted L1 distance to the stationary law once relaxed.
    pub l1_tolerance: f64,
}

/// Every tunable of every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sde: SdeParams,
    pub weights: UtilityWeights,
    pub thresholds: Thresholds,
    pub sampling: SamplingConfig,
    pub agent: AgentConfig,
    pub interference: InterferenceConfig,
    pub k_neighbors: usize,
    pub z_norm: f64,
    pub buffer_size: usize,
    pub capacities: Option<Capacities>,
    pub neighbor_target: NeighborTarget,
    pub ablations: Ablations,
    pub compute_scratch: bool,
    pub suite: SuiteSpec,
    /// Seed of the task order and wall layout.
    pub suite_seed: u64,
    pub seeds: Vec<u64>,
    pub ensemble: EnsembleConfig,
    pub fp: FpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let run = RunSpec::default();
        Self {
            sde: run.sde,
            weights: run.weights,
            thresholds: run.thresholds,
            sampling: run.sampling,
            agent: run.agent,
            interference: InterferenceConfig {
                epsilon_fraction: run.epsilon_fraction,
                delta_r_fraction: run.delta_r_fraction,
            },
            k_neighbors: run.k_neighbors,
            z_norm: run.z_norm,
            buffer_size: run.buffer_size,
            capacities: run.capacities,
            neighbor_target: run.neighbor_target,
            ablations: run.ablations,
            compute_scratch: run.compute_scratch,
            suite: SuiteSpec::default(),
            suite_seed: 42,
            seeds: vec![0],
            ensemble: EnsembleConfig {
                paths: 10_000,
                horizon: 2_000,
                c0: 0.0,
                utility: 0.5,
                interference: 0.1,
                checkpoints: 20,
                mean_tolerance: 0.005,
            },
            fp: FpConfig {
                nodes: 2_000,
                t_final: 2_000.0,
                u_bar: 0.5,
                i_bar: 0.1,
                initial: InitialDensity::Uniform,
                l1_tolerance: 1e-3,
            },
        }
    }
}

impl RunConfig {
    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            agent: self.agent,
            sampling: self.sampling,
            sde: self.sde,
            weights: self.weights,
            thresholds: self.thresholds,
            epsilon_fraction: self.interference.epsilon_fraction,
            delta_r_fraction: self.interference.delta_r_fraction,
            k_neighbors: self.k_neighbors,
            z_norm: self.z_norm,
            buffer_size: self.buffer_size,
            capacities: self.capacities,
            neighbor_target: self.neighbor_target,
            ablations: self.ablations,
            compute_scratch: self.compute_scratch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sde.validate()?;
        self.weights.validate()?;
        self.thresholds.validate()?;
        let run = self.run_spec();
        run.validate()?;
        run.consolidation(1.0)?;
        let e = &self.ensemble;
        if e.paths == 0 || e.horizon == 0 || e.checkpoints == 0 {
            bail!("ensemble: paths, horizon and checkpoints must be positive");
        }
        for (name, v) in [("c0", e.c0), ("utility", e.utility), ("interference", e.interference)] {
            if !(0.0..=1.0).contains(&v) {
                bail!("ensemble.{name} = {v} outside [0, 1]");
            }
        }
        let f = &self.fp;
        if f.nodes < 3 || f.t_final.is_nan() || f.t_final < 0.0 {
            bail!("fp: need at least 3 nodes and a non-negative t_final");
        }
        if !(0.0..=1.0).contains(&f.u_bar) || !(0.0..=1.0).contains(&f.i_bar) {
            bail!("fp: u_bar and i_bar must lie in [0, 1]");
        }
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        Ok(())
    }
}

/// A config document: optional `defaults` and `overrides` layers applied in
/// that order on top of the built-in values. Run manifests have this shape
/// too, so any output manifest can be fed back in.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    defaults: Option<Value>,
    #[serde(default)]
    overrides: Option<Value>,
    #[serde(default)]
    #[allow(dead_code)]
    command: Option<Value>,
    #[serde(default)]
    #[allow(dead_code)]
    version: Option<Value>,
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let file: ConfigFile = serde_json::from_str(text).context("malformed config document")?;
    let mut value = serde_json::to_value(RunConfig::default())?;
    for layer in [file.defaults, file.overrides].into_iter().flatten() {
        if !layer.is_object() {
            bail!("config layers must be JSON objects");
        }
        merge(&mut value, layer);
    }
    let cfg: RunConfig = serde_json::from_value(value).context("invalid config")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            parse_config(&text)
        }
    }
}
