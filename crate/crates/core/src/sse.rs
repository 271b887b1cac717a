//! Stochastic Schrödinger-equation trajectories under classical white noise and
//! their ensemble averages.
//!
//! One step of length `τ` applies `exp(-iηxσxτ) exp(-iηyσyτ) exp(-iηzσzτ)` (the z
//! factor acts first) with `ηi = hi + sqrt(wi)·Ni/sqrt(τ)`, then renormalizes.

use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liouville;
use crate::metrics;
use crate::model::{bloch_vector, BlochVector, Momentum, NoiseStrengths, QahParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SseError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("numerical blow-up at step {step}: state norm {norm}")]
    NumericalBlowup { step: usize, norm: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Pure two-level state `a|↑⟩ + b|↓⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinState {
    pub a: Complex64,
    pub b: Complex64,
}

impl SpinState {
    pub fn down() -> Self {
        Self {
            a: Complex64::new(0.0, 0.0),
            b: Complex64::new(1.0, 0.0),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.a.norm_sqr() + self.b.norm_sqr()).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self {
            a: self.a / n,
            b: self.b / n,
        }
    }

    /// `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)`.
    pub fn polarization(&self) -> [f64; 3] {
        let ab = self.a.conj() * self.b;
        [2.0 * ab.re, 2.0 * ab.im, self.a.norm_sqr() - self.b.norm_sqr()]
    }
}

/// One triple of independent standard normal deviates `(Nx, Ny, Nz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraw(pub [f64; 3]);

/// ChaCha8 words consumed by one step: four `u64`s feed two Box–Muller pairs.
const WORDS_PER_STEP: u128 = 8;

/// Counter-based noise source. Config `c` uses ChaCha stream `c` of the master
/// seed and step `j` starts at word `8j`, so any `(seed, config, step)` draw can be
/// regenerated without replaying earlier steps.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, config_index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(config_index);
        Self { rng }
    }

    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    }

    pub fn next_draw(&mut self) -> NoiseDraw {
        let (n0, n1) = self.normal_pair();
        let (n2, _) = self.normal_pair();
        NoiseDraw([n0, n1, n2])
    }

    fn normal_pair(&mut self) -> (f64, f64) {
        let unit = |x: u64| (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        // 1 - u lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - unit(self.rng.next_u64());
        let u2 = unit(self.rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        (r * c, r * s)
    }
}

/// Draw used at `step` of configuration `config_index`.
pub fn noise_draw(seed: u64, config_index: u64, step: u64) -> NoiseDraw {
    let mut s = NoiseStream::new(seed, config_index);
    s.seek(step);
    s.next_draw()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSchedule {
    /// Total evolution time (ms).
    pub t_total: f64,
    /// Number of time steps M.
    pub n_steps: usize,
    /// Record the polarization every `sample_stride` steps (including t = 0).
    pub sample_stride: usize,
}

impl EvolutionSchedule {
    pub fn new(t_total: f64, n_steps: usize, sample_stride: usize) -> Result<Self, SseError> {
        let s = Self {
            t_total,
            n_steps,
            sample_stride,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SseError> {
        if !(self.t_total.is_finite() && self.t_total > 0.0) {
            return Err(SseError::InvalidSchedule(format!(
                "t_total must be positive, got {}",
                self.t_total
            )));
        }
        if self.n_steps == 0 || self.sample_stride == 0 {
            return Err(SseError::InvalidSchedule(
                "n_steps and sample_stride must be at least 1".into(),
            ));
        }
        if !self.n_steps.is_multiple_of(self.sample_stride) {
            return Err(SseError::InvalidSchedule(format!(
                "sample_stride {} does not divide n_steps {}",
                self.sample_stride, self.n_steps
            )));
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.t_total / self.n_steps as f64
    }

    pub fn n_samples(&self) -> usize {
        self.n_steps / self.sample_stride + 1
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let dt = self.tau() * self.sample_stride as f64;
        (0..self.n_samples()).map(|i| dt * i as f64).collect()
    }
}

/// Polarization samples `s(t)` at one momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinTrajectory {
    pub momentum: Momentum,
    pub times: Vec<f64>,
    pub polarization: Vec<[f64; 3]>,
}

impl SpinTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.polarization.iter().map(|s| s[c]).collect()
    }
}

/// `exp(-iθσa)` applied in place, with `θ = ητ`.
#[inline]
fn rotate(state: &mut SpinState, axis: usize, theta: f64) {
    let (s, c) = theta.sin_cos();
    let (a, b) = (state.a, state.b);
    match axis {
        0 => {
            let mis = Complex64::new(0.0, -s);
            state.a = a * c + mis * b;
            state.b = mis * a + b * c;
        }
        1 => {
            state.a = a * c - b * s;
            state.b = a * s + b * c;
        }
        _ => {
            let e = Complex64::new(c, -s);
            state.a = a * e;
            state.b = b * e.conj();
        }
    }
}

#[inline]
fn advance(state: &mut SpinState, h: &[f64; 3], sqrt_w_tau: &[f64; 3], draw: &NoiseDraw, tau: f64) {
    for axis in [2, 1, 0] {
        rotate(state, axis, h[axis] * tau + sqrt_w_tau[axis] * draw.0[axis]);
    }
}

/// Single Trotterized step of length `tau`.
pub fn step(
    state: &SpinState,
    h: &BlochVector,
    w: &NoiseStrengths,
    draw: &NoiseDraw,
    tau: f64,
) -> Result<SpinState, SseError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(SseError::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    w.validate().map_err(|e| SseError::InvalidInput(e.to_string()))?;
    let n = state.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
        return Err(SseError::InvalidInput(format!("state norm {n} is not 1")));
    }
    let sw = w.as_array().map(|wi| (wi * tau).sqrt());
    let mut next = *state;
    advance(&mut next, &h.as_array(), &sw, draw, tau);
    Ok(next.normalized())
}

/// Trajectory of configuration `config_index` starting from `|↓⟩`.
pub fn simulate_trajectory(
    k: Momentum,
    p: &QahParams,
    w: &NoiseStrengths,
    schedule: &EvolutionSchedule,
    seed: u64,
    config_index: u64,
) -> Result<SpinTrajectory, SseError> {
    check_inputs(p, w, schedule)?;
    let polarization = run_config(k, p, w, schedule, seed, config_index)?;
    Ok(SpinTrajectory {
        momentum: k,
        times: schedule.sample_times(),
        polarization,
    })
}

fn check_inputs(p: &QahParams, w: &NoiseStrengths, s: &EvolutionSchedule) -> Result<(), SseError> {
    p.validate().map_err(|e| SseError::InvalidInput(e.to_string()))?;
    w.validate().map_err(|e| SseError::InvalidInput(e.to_string()))?;
    s.validate()
}

fn run_config(
    k: Momentum,
    p: &QahParams,
    w: &NoiseStrengths,
    schedule: &EvolutionSchedule,
    seed: u64,
    config_index: u64,
) -> Result<Vec<[f64; 3]>, SseError> {
    let tau = schedule.tau();
    let h = bloch_vector(k, p).as_array();
    let sw = w.as_array().map(|wi| (wi * tau).sqrt());
    let mut rng = NoiseStream::new(seed, config_index);
    let mut state = SpinState::down();
    let mut out = Vec::with_capacity(schedule.n_samples());
    out.push(state.polarization());
    for j in 0..schedule.n_steps {
        let draw = rng.next_draw();
        advance(&mut state, &h, &sw, &draw, tau);
        let n = state.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(SseError::NumericalBlowup { step: j + 1, norm: n });
        }
        state = SpinState {
            a: state.a / n,
            b: state.b / n,
        };
        if (j + 1) % schedule.sample_stride == 0 {
            out.push(state.polarization());
        }
    }
    Ok(out)
}

/// Ensemble mean and standard error of the mean per sample and component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean: SpinTrajectory,
    pub std_error: Vec<[f64; 3]>,
    pub n_configs: usize,
}

/// Mean polarization over configurations `0..n_configs`. The reduction order is
/// fixed, so the result does not depend on the worker count.
pub fn ensemble_average(
    k: Momentum,
    p: &QahParams,
    w: &NoiseStrengths,
    schedule: &EvolutionSchedule,
    seed: u64,
    n_configs: usize,
) -> Result<SpinTrajectory, SseError> {
    Ok(ensemble_stats(k, p, w, schedule, seed, n_configs)?.mean)
}

pub fn ensemble_stats(
    k: Momentum,
    p: &QahParams,
    w: &NoiseStrengths,
    schedule: &EvolutionSchedule,
    seed: u64,
    n_configs: usize,
) -> Result<EnsembleStats, SseError> {
    check_inputs(p, w, schedule)?;
    if n_configs == 0 {
        return Err(SseError::InvalidInput("n_configs must be at least 1".into()));
    }
    let times = schedule.sample_times();
    if w.is_zero() {
        // Every configuration is the same deterministic trajectory.
        let s = run_config(k, p, w, schedule, seed, 0)?;
        let zeros = vec![[0.0; 3]; s.len()];
        return Ok(EnsembleStats {
            mean: SpinTrajectory {
                momentum: k,
                times,
                polarization: s,
            },
            std_error: zeros,
            n_configs,
        });
    }
    let runs: Vec<Vec<[f64; 3]>> = (0..n_configs as u64)
        .into_par_iter()
        .map(|c| run_config(k, p, w, schedule, seed, c))
        .collect::<Result<_, _>>()?;
    let ns = times.len();
    let mut sum = vec![[0.0; 3]; ns];
    let mut sum2 = vec![[0.0; 3]; ns];
    for run in &runs {
        for (i, s) in run.iter().enumerate() {
            for c in 0..3 {
                sum[i][c] += s[c];
                sum2[i][c] += s[c] * s[c];
            }
        }
    }
    let n = n_configs as f64;
    let mean: Vec<[f64; 3]> = sum.iter().map(|s| s.map(|x| x / n)).collect();
    let std_error = mean
        .iter()
        .zip(&sum2)
        .map(|(m, s2)| {
            let mut e = [0.0; 3];
            for c in 0..3 {
                let var = if n_configs > 1 {
                    ((s2[c] - n * m[c] * m[c]) / (n - 1.0)).max(0.0)
                } else {
                    0.0
                };
                e[c] = (var / n).sqrt();
            }
            e
        })
        .collect();
    Ok(EnsembleStats {
        mean: SpinTrajectory {
            momentum: k,
            times,
            polarization: mean,
        },
        std_error,
        n_configs,
    })
}

/// Agreement between the ensemble average at step count `n_steps` and the exact
/// Lindblad evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_steps: usize,
    pub tau: f64,
    /// Sum over samples and components of squared deviations.
    pub rss: f64,
    pub mean_fidelity: f64,
    pub fidelity: Vec<f64>,
}

/// Runs the ensemble for each step count in `m_list` over the same total time.
/// All runs are sampled at the same `gcd(m_list)` intervals so the residual sums
/// are comparable.
pub fn discretization_sweep(
    k: Momentum,
    p: &QahParams,
    w: &NoiseStrengths,
    t_total: f64,
    m_list: &[usize],
    seed: u64,
    n_configs: usize,
) -> Result<Vec<SweepPoint>, SseError> {
    if m_list.is_empty() || m_list.contains(&0) {
        return Err(SseError::InvalidInput(
            "step counts must be non-empty and positive".into(),
        ));
    }
    let intervals = m_list.iter().copied().fold(0, gcd);
    let mut out = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let sched = EvolutionSchedule::new(t_total, m, m / intervals)?;
        let sse = ensemble_average(k, p, w, &sched, seed, n_configs)?;
        let exact = liouville::exact_evolution(k, p, w, [0.0, 0.0, -1.0], &sse.times);
        let rss = metrics::rss(&sse.polarization, &exact.polarization);
        let fidelity: Vec<f64> = sse
            .polarization
            .iter()
            .zip(&exact.polarization)
            .map(|(a, b)| metrics::bloch_fidelity(a, b))
            .collect();
        let mean_fidelity = fidelity.iter().sum::<f64>() / fidelity.len() as f64;
        out.push(SweepPoint {
            n_steps: m,
            tau: sched.tau(),
            rss,
            mean_fidelity,
            fidelity,
        });
    }
    Ok(out)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> QahParams {
        QahParams::new(1.0, 0.2, 1.2).unwrap()
    }

    #[test]
    fn polarization_of_basis_states() {
        assert_eq!(SpinState::down().polarization(), [0.0, 0.0, -1.0]);
        let plus_y = SpinState {
            a: Complex64::new(1.0 / 2f64.sqrt(), 0.0),
            b: Complex64::new(0.0, 1.0 / 2f64.sqrt()),
        };
        let s = plus_y.polarization();
        assert_abs_diff_eq!(s[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn noise_draws_are_random_access() {
        let mut s = NoiseStream::new(7, 3);
        let seq: Vec<NoiseDraw> = (0..5).map(|_| s.next_draw()).collect();
        for (j, d) in seq.iter().enumerate() {
            assert_eq!(*d, noise_draw(7, 3, j as u64));
        }
        assert_ne!(noise_draw(7, 3, 0), noise_draw(7, 4, 0));
        assert_ne!(noise_draw(7, 3, 0), noise_draw(8, 3, 0));
    }

    #[test]
    fn noise_draw_moments() {
        let mut s = NoiseStream::new(1, 0);
        let n = 40_000;
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        for _ in 0..n {
            let d = s.next_draw().0;
            for c in 0..3 {
                m[c] += d[c];
                v[c] += d[c] * d[c];
            }
        }
        for c in 0..3 {
            assert!((m[c] / n as f64).abs() < 0.02);
            assert!((v[c] / n as f64 - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(EvolutionSchedule::new(30.0, 300, 20).is_ok());
        assert!(EvolutionSchedule::new(30.0, 300, 7).is_err());
        assert!(EvolutionSchedule::new(0.0, 300, 20).is_err());
        assert!(EvolutionSchedule::new(30.0, 0, 1).is_err());
        let s = EvolutionSchedule::new(30.0, 300, 20).unwrap();
        assert_eq!(s.n_samples(), 16);
        assert_abs_diff_eq!(s.sample_times()[15], 30.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_noise_precession_about_z() {
        let h = BlochVector {
            hx: 0.0,
            hy: 0.0,
            hz: 0.5,
        };
        let start = SpinState {
            a: Complex64::new(1.0 / 2f64.sqrt(), 0.0),
            b: Complex64::new(1.0 / 2f64.sqrt(), 0.0),
        };
        let tau = 0.1;
        let next = step(&start, &h, &NoiseStrengths::zero(), &NoiseDraw([0.0; 3]), tau).unwrap();
        // ds/dt = 2 h × s rotates (1,0,0) by angle 2 hz τ.
        let s = next.polarization();
        assert_abs_diff_eq!(s[0], (2.0 * 0.5 * tau).cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(s[1], (2.0 * 0.5 * tau).sin(), epsilon = 1e-14);
    }

    #[test]
    fn step_rejects_bad_input() {
        let h = BlochVector {
            hx: 0.1,
            hy: 0.0,
            hz: 0.5,
        };
        let bad = SpinState {
            a: Complex64::new(1.0, 0.0),
            b: Complex64::new(1.0, 0.0),
        };
        let w = NoiseStrengths::zero();
        assert!(step(&bad, &h, &w, &NoiseDraw([0.0; 3]), 0.1).is_err());
        assert!(step(&SpinState::down(), &h, &w, &NoiseDraw([0.0; 3]), 0.0).is_err());
    }

    #[test]
    fn zero_noise_ensemble_equals_single_trajectory() {
        let k = Momentum::new(0.7, -0.3);
        let s = EvolutionSchedule::new(5.0, 100, 10).unwrap();
        let w = NoiseStrengths::zero();
        let one = simulate_trajectory(k, &params(), &w, &s, 1, 0).unwrap();
        let avg = ensemble_average(k, &params(), &w, &s, 1, 50).unwrap();
        assert_eq!(one.polarization, avg.polarization);
    }

    #[test]
    fn gcd_of_step_counts() {
        assert_eq!([30usize, 100, 300].iter().copied().fold(0, gcd), 10);
    }
}
