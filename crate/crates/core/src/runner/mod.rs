//! Configuration-driven pipelines and their machine-readable outputs.

mod config;
mod output;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ConvergenceSpec, GridSpec, Mode, RunConfig, SweetSpotSpec, SCHEMA_VERSION};
pub use output::{read_summary, texture_csv, write_convergence, write_sweetspot, write_texture_run, write_transitions};

use crate::fitting::{fit_modes, rescale, rescaled_average, time_average, FitConfig};
use crate::liouville::{self, ModeDecomposition};
use crate::metrics;
use crate::model::{chern_number, Momentum, MomentumGrid, NoiseStrengths, QahParams};
use crate::sse::{self, EvolutionSchedule, SweepPoint};
use crate::topology::{
    self, ClassifyOptions, DbisExtraction, SweetSpotPoint, TextureGrid, TransitionEvidence, TransitionPhase,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 1,
            RunError::Numerical(_) => 2,
        }
    }
}

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Result for one momentum of the texture grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub momentum: Momentum,
    pub s_bar: [f64; 3],
    pub omega: f64,
    pub defined: bool,
    pub decomposition: Option<ModeDecomposition>,
    pub fit_residual_rms: Option<f64>,
    pub fit_converged: Option<bool>,
    /// Oracle time average, filled in `both` mode.
    pub oracle_s_bar: Option<[f64; 3]>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub software_version: String,
    pub config: RunConfig,
    pub post_quench: QahParams,
    pub cells: Vec<CellResult>,
    pub texture: TextureGrid,
    /// dBIS of the run texture.
    pub dbis: Option<DbisExtraction>,
    pub dbis_error: Option<String>,
    /// Winding W per closed curve of the run texture.
    pub windings: Vec<Option<i32>>,
    /// Minimum ω over lattice nodes adjacent to the dBIS, and where.
    pub omega_min_lattice: Option<(f64, Momentum)>,
    /// Minimum interpolated ω along the dBIS curves.
    pub omega_min_curve: Option<f64>,
    /// Oracle classification on a `classify_texture_n` grid over the same window.
    pub classification: TransitionEvidence,
    pub chern_number: Option<i32>,
    pub failed_cells: usize,
    /// RMS of `s̄_sse − s̄_oracle` over defined cells (`both` mode).
    pub mode_difference_rms: Option<f64>,
}

/// Wall-clock time, kept out of the summary so reruns are byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub cells_seconds: f64,
    pub classification_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureRun {
    pub summary: RunSummary,
    pub timing: Timing,
}

/// Independent per-cell master seed.
fn cell_seed(seed: u64, cell: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((cell as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn classify_options(cfg: &RunConfig) -> ClassifyOptions {
    ClassifyOptions {
        kmin: cfg.grid.kmin,
        kmax: cfg.grid.kmax,
        texture_n: cfg.classify_texture_n,
        ep_grid_n: cfg.ep_grid_n,
        times: cfg.schedule.sample_times(),
        dbis_threshold: cfg.dbis_threshold,
    }
}

fn oracle_cell(k: Momentum, p: &QahParams, w: &NoiseStrengths, times: &[f64], omega_min: f64) -> CellResult {
    match liouville::quench_decomposition(k, p, w) {
        Ok(d) => CellResult {
            momentum: k,
            s_bar: rescaled_average(&d, times),
            omega: d.omega(),
            defined: !d.is_overdamped() && d.omega() >= omega_min,
            decomposition: Some(d),
            fit_residual_rms: None,
            fit_converged: None,
            oracle_s_bar: None,
            failure: None,
        },
        // Exceptional point: no oscillation to average, the cell is masked.
        Err(_) => CellResult {
            momentum: k,
            s_bar: [0.0; 3],
            omega: liouville::oscillation_frequency(k, p, w),
            defined: false,
            decomposition: None,
            fit_residual_rms: None,
            fit_converged: None,
            oracle_s_bar: None,
            failure: None,
        },
    }
}

fn sse_cell(
    k: Momentum,
    p: &QahParams,
    w: &NoiseStrengths,
    schedule: &EvolutionSchedule,
    seed: u64,
    n_configs: usize,
    omega_min: f64,
) -> CellResult {
    let failed = |msg: String| CellResult {
        momentum: k,
        s_bar: [0.0; 3],
        omega: 0.0,
        defined: false,
        decomposition: None,
        fit_residual_rms: None,
        fit_converged: None,
        oracle_s_bar: None,
        failure: Some(msg),
    };
    let traj = match sse::ensemble_average(k, p, w, schedule, seed, n_configs) {
        Ok(t) => t,
        Err(e) => return failed(e.to_string()),
    };
    let init = liouville::quench_decomposition(k, p, w).ok();
    match fit_modes(&traj, init.as_ref(), &FitConfig::default()) {
        Ok(fit) => {
            let d = fit.decomposition;
            CellResult {
                momentum: k,
                s_bar: time_average(&rescale(&fit, &traj.times)),
                omega: d.omega(),
                defined: fit.converged && !d.is_overdamped() && d.omega() >= omega_min,
                decomposition: Some(d),
                fit_residual_rms: Some(fit.residual_rms),
                fit_converged: Some(fit.converged),
                oracle_s_bar: None,
                failure: (!fit.converged).then(|| format!("fit not converged (rms {:.3e})", fit.residual_rms)),
            }
        }
        Err(e) => failed(e.to_string()),
    }
}

/// Texture pipeline: per-momentum evolution and time average, dBIS, windings,
/// and classification.
pub fn run_texture(cfg: &RunConfig) -> Result<TextureRun, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let p = cfg.post_quench();
    let w = cfg.noise;
    let grid = MomentumGrid::square(cfg.grid.kmin, cfg.grid.kmax, cfg.grid.n)
        .map_err(|e| RunError::Config(vec![format!("grid: {e}")]))?;
    let times = cfg.schedule.sample_times();
    let omega_min = topology::resolvable_omega(cfg.schedule.t_total);

    let cells: Vec<CellResult> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let k = grid.at(i);
            match cfg.mode {
                Mode::Oracle => oracle_cell(k, &p, &w, &times, omega_min),
                Mode::Sse | Mode::Both => {
                    let mut c = sse_cell(
                        k,
                        &p,
                        &w,
                        &cfg.schedule,
                        cell_seed(cfg.seed, i),
                        cfg.n_configs,
                        omega_min,
                    );
                    if cfg.mode == Mode::Both {
                        let o = oracle_cell(k, &p, &w, &times, omega_min);
                        c.oracle_s_bar = o.defined.then_some(o.s_bar);
                    }
                    c
                }
            }
        })
        .collect();
    let cells_seconds = start.elapsed().as_secs_f64();

    let texture = TextureGrid {
        grid: grid.clone(),
        s_bar: cells.iter().map(|c| c.s_bar).collect(),
        omega: cells.iter().map(|c| c.omega).collect(),
        defined: cells.iter().map(|c| c.defined).collect(),
        bloch: (0..grid.len())
            .map(|i| crate::model::bloch_vector(grid.at(i), &p).as_array())
            .collect(),
    };
    let (dbis, dbis_error) = match topology::extract_dbis(&texture, cfg.dbis_threshold) {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let windings = dbis
        .as_ref()
        .map(|d| {
            d.curves
                .iter()
                .filter(|c| c.closed)
                .map(|c| {
                    topology::dynamical_field(&texture, c)
                        .and_then(|f| topology::winding_w(&f))
                        .ok()
                        .map(|x| x.value)
                })
                .collect()
        })
        .unwrap_or_default();
    let omega_min_lattice = topology::lattice_min_omega(&texture);
    let omega_min_curve = dbis.as_ref().and_then(|d| topology::curve_min_omega(&texture, d));

    let class_start = Instant::now();
    let classification = topology::classify_transition(&p, &w, &classify_options(cfg));
    let classification_seconds = class_start.elapsed().as_secs_f64();

    let mode_difference_rms = (cfg.mode == Mode::Both).then(|| {
        let pairs: Vec<([f64; 3], [f64; 3])> = cells
            .iter()
            .filter(|c| c.defined)
            .filter_map(|c| c.oracle_s_bar.map(|o| (c.s_bar, o)))
            .collect();
        let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        if a.is_empty() {
            0.0
        } else {
            metrics::rms(&a, &b)
        }
    });
    let failed_cells = cells.iter().filter(|c| c.failure.is_some()).count();
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        software_version: SOFTWARE_VERSION.to_string(),
        config: cfg.clone(),
        post_quench: p,
        cells,
        texture,
        dbis,
        dbis_error,
        windings,
        omega_min_lattice,
        omega_min_curve,
        classification,
        chern_number: chern_number(&p, 64).ok(),
        failed_cells,
        mode_difference_rms,
    };
    Ok(TextureRun {
        summary,
        timing: Timing {
            cells_seconds,
            classification_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// One row of the transition verdict table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub name: Option<String>,
    pub params: QahParams,
    pub noise: NoiseStrengths,
    pub phase: TransitionPhase,
    /// N_E of every exceptional cluster touching the dBIS.
    pub n_e: Vec<Option<i32>>,
    pub evidence: TransitionEvidence,
}

/// Classifies each configuration (post-quench parameters, oracle texture).
pub fn run_transition_suite(cfgs: &[RunConfig]) -> Result<Vec<TransitionRow>, RunError> {
    for c in cfgs {
        c.validate()?;
    }
    Ok(cfgs
        .iter()
        .map(|cfg| {
            let p = cfg.post_quench();
            let ev = topology::classify_transition(&p, &cfg.noise, &classify_options(cfg));
            TransitionRow {
                name: cfg.name.clone(),
                params: p,
                noise: cfg.noise,
                phase: ev.phase,
                n_e: ev.clusters.iter().filter(|c| c.touches_dbis).map(|c| c.n_e).collect(),
                evidence: ev,
            }
        })
        .collect())
}

/// The weak-noise, type-I and type-II parameter sets over [−2, 2]².
pub fn canonical_transition_configs() -> Vec<RunConfig> {
    let base = RunConfig {
        grid: GridSpec {
            kmin: -2.0,
            kmax: 2.0,
            n: 15,
        },
        ..RunConfig::weak_noise_default()
    };
    vec![
        base.clone(),
        RunConfig {
            name: Some("type_I".into()),
            noise: NoiseStrengths {
                wx: 0.1,
                wy: 0.05,
                wz: 0.45,
            },
            ..base.clone()
        },
        RunConfig {
            name: Some("type_II".into()),
            model: QahParams {
                xi_so: 2.0,
                ..base.model
            },
            noise: NoiseStrengths {
                wx: 1.6,
                wy: 0.0,
                wz: 0.8,
            },
            ..base
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePoint {
    pub n_configs: usize,
    /// sqrt of the replicate-averaged mean squared deviation from the oracle.
    pub rms: f64,
    pub replicate_rms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub sweep_k: Momentum,
    pub sweep: Vec<SweepPoint>,
    pub rss_monotone: bool,
    pub ensemble_k: Momentum,
    pub ensemble: Vec<EnsemblePoint>,
    /// Log-log slope of RMS against n_configs.
    pub ensemble_slope: f64,
}

/// Step-count sweep and ensemble-size study against the exact evolution.
pub fn run_convergence(cfg: &RunConfig) -> Result<ConvergenceReport, RunError> {
    cfg.validate()?;
    let p = cfg.post_quench();
    let w = cfg.noise;
    let c = &cfg.convergence;
    let num = |e: sse::SseError| RunError::Numerical(e.to_string());
    let sweep = sse::discretization_sweep(
        c.sweep_k,
        &p,
        &w,
        cfg.schedule.t_total,
        &c.m_list,
        cfg.seed,
        c.sweep_configs,
    )
    .map_err(num)?;
    let rss_monotone = sweep.windows(2).all(|s| s[1].rss < s[0].rss);

    let times = cfg.schedule.sample_times();
    let exact = liouville::exact_evolution(c.ensemble_k, &p, &w, [0.0, 0.0, -1.0], &times);
    let mut ensemble = Vec::new();
    for &n in &c.config_counts {
        let mut replicate_rms = Vec::new();
        for r in 0..c.replicates {
            let avg = sse::ensemble_average(c.ensemble_k, &p, &w, &cfg.schedule, cfg.seed.wrapping_add(r as u64), n)
                .map_err(num)?;
            replicate_rms.push(metrics::rms(&avg.polarization, &exact.polarization));
        }
        let mse = replicate_rms.iter().map(|x| x * x).sum::<f64>() / replicate_rms.len() as f64;
        ensemble.push(EnsemblePoint {
            n_configs: n,
            rms: mse.sqrt(),
            replicate_rms,
        });
    }
    let xs: Vec<f64> = ensemble.iter().map(|e| e.n_configs as f64).collect();
    let ys: Vec<f64> = ensemble.iter().map(|e| e.rms).collect();
    let ensemble_slope = if xs.len() >= 2 {
        metrics::log_log_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    Ok(ConvergenceReport {
        sweep_k: c.sweep_k,
        sweep,
        rss_monotone,
        ensemble_k: c.ensemble_k,
        ensemble,
        ensemble_slope: if ensemble_slope.is_finite() {
            ensemble_slope
        } else {
            0.0
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweetSpotReport {
    pub params: QahParams,
    /// Literal inequality at the configured noise.
    pub literal: bool,
    pub scan: Vec<SweetSpotPoint>,
}

pub fn run_sweetspot(cfg: &RunConfig) -> Result<SweetSpotReport, RunError> {
    cfg.validate()?;
    let p = cfg.post_quench();
    let scan = topology::sweet_spot_scan(
        &p,
        &cfg.sweetspot.direction,
        &cfg.sweetspot.magnitudes,
        &classify_options(cfg),
    )
    .map_err(|e| RunError::Numerical(e.to_string()))?;
    Ok(SweetSpotReport {
        params: p,
        literal: topology::sweet_spot_literal(&p, &cfg.noise),
        scan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_round_trip() {
        let cfg = RunConfig::weak_noise_default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn config_errors_are_collected() {
        let mut cfg = RunConfig::weak_noise_default();
        cfg.grid.n = 1;
        cfg.noise.wx = -1.0;
        cfg.mode = Mode::Sse;
        cfg.n_configs = 0;
        match cfg.validate() {
            Err(RunError::Config(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::weak_noise_default().to_json()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(matches!(RunConfig::from_json(&v.to_string()), Err(RunError::Config(_))));
    }

    #[test]
    fn cell_seeds_differ() {
        assert_ne!(cell_seed(1, 0), cell_seed(1, 1));
        assert_ne!(cell_seed(1, 0), cell_seed(2, 0));
    }

    #[test]
    fn empty_transition_suite() {
        assert!(run_transition_suite(&[]).unwrap().is_empty());
    }
}
