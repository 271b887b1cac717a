use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{Momentum, NoiseStrengths, QahParams};
use crate::sse::EvolutionSchedule;

use super::RunError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sse,
    #[default]
    Oracle,
    Both,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sse" => Ok(Mode::Sse),
            "oracle" => Ok(Mode::Oracle),
            "both" => Ok(Mode::Both),
            other => Err(format!("unknown mode {other:?} (expected sse, oracle or both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub kmin: f64,
    pub kmax: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    /// Momentum of the discretization sweep.
    #[serde(default = "default_sweep_k")]
    pub sweep_k: Momentum,
    #[serde(default = "default_m_list")]
    pub m_list: Vec<usize>,
    #[serde(default = "default_sweep_configs")]
    pub sweep_configs: usize,
    /// Momentum of the ensemble-size study.
    #[serde(default = "default_ensemble_k")]
    pub ensemble_k: Momentum,
    #[serde(default = "default_config_counts")]
    pub config_counts: Vec<usize>,
    /// Independent master seeds (seed, seed + 1, ...) averaged per count.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

fn default_sweep_k() -> Momentum {
    Momentum::new(1.2857, -1.8)
}
fn default_m_list() -> Vec<usize> {
    vec![30, 100, 300]
}
fn default_sweep_configs() -> usize {
    5000
}
fn default_ensemble_k() -> Momentum {
    Momentum::new(-1.286, -0.257)
}
fn default_config_counts() -> Vec<usize> {
    vec![50, 200, 1000, 5000]
}
fn default_replicates() -> usize {
    4
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            sweep_k: default_sweep_k(),
            m_list: default_m_list(),
            sweep_configs: default_sweep_configs(),
            ensemble_k: default_ensemble_k(),
            config_counts: default_config_counts(),
            replicates: default_replicates(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweetSpotSpec {
    pub direction: NoiseStrengths,
    pub magnitudes: Vec<f64>,
}

impl Default for SweetSpotSpec {
    fn default() -> Self {
        Self {
            direction: NoiseStrengths::isotropic(1.0),
            magnitudes: vec![0.5, 5.0, 10.0],
        }
    }
}

/// Run configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    /// Pre-quench Hamiltonian; only recorded, the initial state is always |↓⟩.
    pub model: QahParams,
    pub noise: NoiseStrengths,
    /// Post-quench Zeeman term that drives the evolution.
    pub quench_mz: f64,
    pub grid: GridSpec,
    pub schedule: EvolutionSchedule,
    pub n_configs: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
    /// Nodes per axis of the exceptional-point search grid.
    #[serde(default = "default_ep_grid_n")]
    pub ep_grid_n: usize,
    /// Nodes per axis of the oracle texture used for classification.
    #[serde(default = "default_classify_n")]
    pub classify_texture_n: usize,
    #[serde(default = "default_threshold")]
    pub dbis_threshold: f64,
    #[serde(default)]
    pub convergence: ConvergenceSpec,
    #[serde(default)]
    pub sweetspot: SweetSpotSpec,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_ep_grid_n() -> usize {
    64
}
fn default_classify_n() -> usize {
    61
}
fn default_threshold() -> f64 {
    0.05
}

impl RunConfig {
    /// Weak-noise quench on the 15×15 lattice over [−1.8, 1.8]².
    pub fn weak_noise_default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: Some("weak".into()),
            model: QahParams {
                xi0: 1.0,
                xi_so: 0.2,
                mz: 10.0,
            },
            noise: NoiseStrengths {
                wx: 0.05,
                wy: 0.0,
                wz: 0.01,
            },
            quench_mz: 1.2,
            grid: GridSpec {
                kmin: -1.8,
                kmax: 1.8,
                n: 15,
            },
            schedule: EvolutionSchedule {
                t_total: 30.0,
                n_steps: 300,
                sample_stride: 20,
            },
            n_configs: 5000,
            seed: 20_240_601,
            mode: Mode::Oracle,
            outputs: None,
            ep_grid_n: default_ep_grid_n(),
            classify_texture_n: default_classify_n(),
            dbis_threshold: default_threshold(),
            convergence: ConvergenceSpec::default(),
            sweetspot: SweetSpotSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| RunError::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hamiltonian after the quench.
    pub fn post_quench(&self) -> QahParams {
        self.model.with_mz(self.quench_mz)
    }

    /// Collects every problem rather than stopping at the first.
    pub fn validate(&self) -> Result<(), RunError> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if let Err(e) = self.model.validate() {
            errs.push(format!("model: {e}"));
        }
        if let Err(e) = self.noise.validate() {
            errs.push(format!("noise: {e}"));
        }
        if !self.quench_mz.is_finite() {
            errs.push("quench_mz: must be finite".into());
        }
        if self.grid.n < 2 {
            errs.push(format!("grid.n: must be at least 2, got {}", self.grid.n));
        }
        if !(self.grid.kmin.is_finite() && self.grid.kmax.is_finite() && self.grid.kmax > self.grid.kmin) {
            errs.push(format!(
                "grid: need finite kmin < kmax, got [{}, {}]",
                self.grid.kmin, self.grid.kmax
            ));
        }
        if let Err(e) = self.schedule.validate() {
            errs.push(format!("schedule: {e}"));
        }
        if self.mode != Mode::Oracle && self.n_configs == 0 {
            errs.push("n_configs: must be at least 1 in sse mode".into());
        }
        if self.ep_grid_n < 4 {
            errs.push(format!("ep_grid_n: must be at least 4, got {}", self.ep_grid_n));
        }
        if self.classify_texture_n < 8 {
            errs.push(format!(
                "classify_texture_n: must be at least 8, got {}",
                self.classify_texture_n
            ));
        }
        if !(self.dbis_threshold.is_finite() && self.dbis_threshold > 0.0) {
            errs.push("dbis_threshold: must be positive".into());
        }
        let c = &self.convergence;
        if c.m_list.is_empty() || c.m_list.contains(&0) {
            errs.push("convergence.m_list: must be non-empty and positive".into());
        }
        if c.config_counts.is_empty() || c.config_counts.contains(&0) {
            errs.push("convergence.config_counts: must be non-empty and positive".into());
        }
        if c.replicates == 0 || c.sweep_configs == 0 {
            errs.push("convergence: replicates and sweep_configs must be at least 1".into());
        }
        if let Err(e) = self.sweetspot.direction.validate() {
            errs.push(format!("sweetspot.direction: {e}"));
        }
        if self.sweetspot.magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            errs.push("sweetspot.magnitudes: must be finite and non-negative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(RunError::Config(errs))
        }
    }
}
