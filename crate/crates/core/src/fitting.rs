//! Nonlinear least-squares extraction of the mode decomposition from a sampled
//! polarization trajectory, decay-rate rescaling, and time averaging.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liouville::{ModeDecomposition, Transient};
use crate::sse::SpinTrajectory;

const N_PARAMS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} scalar samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("trajectory is below the noise floor everywhere")]
    DegenerateData,
    #[error("fit diverged (residual rms {residual_rms:.3e})")]
    FitDiverged { residual_rms: f64 },
    #[error("invalid trajectory: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// A fit is reported converged only if its residual RMS is below this.
    pub residual_threshold: f64,
    /// Samples with |s| below this everywhere are rejected as degenerate.
    pub noise_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            residual_threshold: 0.05,
            noise_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitModel {
    Oscillating,
    Overdamped,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub decomposition: ModeDecomposition,
    pub model: FitModel,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Trajectory with all decay rates set to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledTrajectory {
    pub times: Vec<f64>,
    pub polarization: Vec<[f64; 3]>,
}

/// Parameter layout: amplitudes `a` (3), `b` (3), `d` (3), then three rates.
/// Oscillating: `a e^{−λ0 t} + 2 e^{−λ1 t}(b cos ωt + d sin ωt)`, so `s+ = b + i d`.
/// Overdamped: `a e^{−λ0 t} + b e^{−λa t} + d e^{−λb t}`.
fn model_eval(model: FitModel, th: &[f64], t: f64, out_r: &mut [f64; 3], jac: Option<&mut [[f64; N_PARAMS]; 3]>) {
    let (l0, l1, om) = (th[9], th[10], th[11]);
    let e0 = (-l0 * t).exp();
    match model {
        FitModel::Oscillating | FitModel::Static => {
            let e1 = (-l1 * t).exp();
            let (sn, cs) = (om * t).sin_cos();
            for c in 0..3 {
                let (a, b, d) = (th[c], th[3 + c], th[6 + c]);
                let osc = b * cs + d * sn;
                out_r[c] = a * e0 + 2.0 * e1 * osc;
            }
            if let Some(j) = jac {
                for c in 0..3 {
                    let (a, b, d) = (th[c], th[3 + c], th[6 + c]);
                    let row = &mut j[c];
                    row.fill(0.0);
                    row[c] = e0;
                    row[3 + c] = 2.0 * e1 * cs;
                    row[6 + c] = 2.0 * e1 * sn;
                    row[9] = -t * a * e0;
                    row[10] = -t * 2.0 * e1 * (b * cs + d * sn);
                    row[11] = 2.0 * e1 * t * (-b * sn + d * cs);
                }
            }
        }
        FitModel::Overdamped => {
            let ea = (-l1 * t).exp();
            let eb = (-om * t).exp();
            for c in 0..3 {
                out_r[c] = th[c] * e0 + th[3 + c] * ea + th[6 + c] * eb;
            }
            if let Some(j) = jac {
                for c in 0..3 {
                    let row = &mut j[c];
                    row.fill(0.0);
                    row[c] = e0;
                    row[3 + c] = ea;
                    row[6 + c] = eb;
                    row[9] = -t * th[c] * e0;
                    row[10] = -t * th[3 + c] * ea;
                    row[11] = -t * th[6 + c] * eb;
                }
            }
        }
    }
}

struct Problem<'a> {
    model: FitModel,
    times: &'a [f64],
    data: &'a [[f64; 3]],
}

impl Problem<'_> {
    fn residuals(&self, th: &[f64]) -> DVector<f64> {
        let mut r = DVector::zeros(3 * self.times.len());
        let mut s = [0.0; 3];
        for (i, &t) in self.times.iter().enumerate() {
            model_eval(self.model, th, t, &mut s, None);
            for c in 0..3 {
                r[3 * i + c] = s[c] - self.data[i][c];
            }
        }
        r
    }

    fn jacobian(&self, th: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = 3 * self.times.len();
        let mut r = DVector::zeros(n);
        let mut jm = DMatrix::zeros(n, N_PARAMS);
        let mut s = [0.0; 3];
        let mut j = [[0.0; N_PARAMS]; 3];
        for (i, &t) in self.times.iter().enumerate() {
            model_eval(self.model, th, t, &mut s, Some(&mut j));
            for c in 0..3 {
                r[3 * i + c] = s[c] - self.data[i][c];
                for q in 0..N_PARAMS {
                    jm[(3 * i + c, q)] = j[c][q];
                }
            }
        }
        (r, jm)
    }
}

struct LmOutcome {
    theta: Vec<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt(pb: &Problem, theta0: &[f64], max_iter: usize) -> LmOutcome {
    let mut th = theta0.to_vec();
    let (mut r, mut jm) = pb.jacobian(&th);
    let mut cost = 0.5 * r.norm_squared();
    let mut a = jm.transpose() * &jm;
    let mut g = jm.transpose() * &r;
    let mut mu = 1e-3 * (0..N_PARAMS).map(|i| a[(i, i)]).fold(0.0, f64::max).max(1e-12);
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    let data_scale = pb.data.iter().flat_map(|s| s.iter()).map(|x| x * x).sum::<f64>();
    let mut history: Vec<f64> = Vec::with_capacity(max_iter);
    for it in 0..max_iter {
        iterations = it + 1;
        history.push(cost);
        // Stagnation along a flat valley (e.g. a frequency at the sampling Nyquist limit).
        if it >= 10 && history[it - 10] - cost <= 1e-6 * cost {
            converged = true;
            break;
        }
        if g.amax() <= 1e-15 * (1.0 + data_scale) || cost <= 1e-30 * (1.0 + data_scale) {
            converged = true;
            break;
        }
        let mut damped = a.clone();
        for i in 0..N_PARAMS {
            damped[(i, i)] += mu * a[(i, i)].max(1e-12);
        }
        let step = match damped.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match damped.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    mu *= nu;
                    nu *= 2.0;
                    continue;
                }
            },
        };
        let th_norm = th.iter().map(|x| x * x).sum::<f64>().sqrt();
        if step.norm() <= 1e-13 * (th_norm + 1e-13) {
            converged = true;
            break;
        }
        let trial: Vec<f64> = th.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
        let r_new = pb.residuals(&trial);
        let cost_new = 0.5 * r_new.norm_squared();
        // Gain ratio against the linearized model.
        let predicted = -(step.dot(&g) + 0.5 * step.dot(&(&a * &step)));
        let rho = if predicted > 0.0 {
            (cost - cost_new) / predicted
        } else {
            -1.0
        };
        if cost_new.is_finite() && rho > 0.0 {
            let rel = (cost - cost_new) / cost.max(f64::MIN_POSITIVE);
            th = trial;
            cost = cost_new;
            (r, jm) = pb.jacobian(&th);
            a = jm.transpose() * &jm;
            g = jm.transpose() * &r;
            mu *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            if rel < 1e-10 {
                converged = true;
                break;
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            if mu > 1e30 {
                // No descent direction left at machine precision.
                converged = true;
                break;
            }
        }
    }
    let _ = r;
    LmOutcome {
        theta: th,
        cost,
        iterations,
        converged,
    }
}

fn theta_from(d: &ModeDecomposition) -> (FitModel, Vec<f64>) {
    let mut th = vec![0.0; N_PARAMS];
    th[..3].copy_from_slice(&d.s0);
    th[9] = d.lambda0;
    match d.transient {
        Transient::Oscillating { s_plus, lambda1, omega } => {
            for c in 0..3 {
                th[3 + c] = s_plus[c].re;
                th[6 + c] = s_plus[c].im;
            }
            th[10] = lambda1;
            th[11] = omega;
            (FitModel::Oscillating, th)
        }
        Transient::Overdamped {
            s_a,
            s_b,
            lambda_a,
            lambda_b,
        } => {
            th[3..6].copy_from_slice(&s_a);
            th[6..9].copy_from_slice(&s_b);
            th[10] = lambda_a;
            th[11] = lambda_b;
            (FitModel::Overdamped, th)
        }
    }
}

fn decomposition_from(model: FitModel, th: &[f64]) -> ModeDecomposition {
    let s0 = [th[0], th[1], th[2]];
    let transient = match model {
        FitModel::Oscillating | FitModel::Static => {
            let (mut b, mut d, mut om) = ([th[3], th[4], th[5]], [th[6], th[7], th[8]], th[11]);
            if om < 0.0 {
                // Same curve with ω → −ω and d → −d.
                om = -om;
                d = d.map(|x| -x);
            }
            if model == FitModel::Static {
                b = [0.0; 3];
                d = [0.0; 3];
            }
            Transient::Oscillating {
                s_plus: [0, 1, 2].map(|c| Complex64::new(b[c], d[c])),
                lambda1: th[10],
                omega: om,
            }
        }
        FitModel::Overdamped => {
            let (mut ia, mut ib) = ((3, th[10]), (6, th[11]));
            if ia.1 > ib.1 {
                std::mem::swap(&mut ia, &mut ib);
            }
            Transient::Overdamped {
                s_a: [th[ia.0], th[ia.0 + 1], th[ia.0 + 2]],
                s_b: [th[ib.0], th[ib.0 + 1], th[ib.0 + 2]],
                lambda_a: ia.1,
                lambda_b: ib.1,
            }
        }
    };
    ModeDecomposition {
        s0,
        lambda0: th[9],
        transient,
    }
}

/// Linear least squares for the nine amplitudes at fixed rates; returns the
/// parameter vector and residual sum of squares.
fn project_amplitudes(model: FitModel, times: &[f64], data: &[[f64; 3]], rates: [f64; 3]) -> Option<(Vec<f64>, f64)> {
    let n = times.len();
    let mut basis = DMatrix::zeros(n, 3);
    for (i, &t) in times.iter().enumerate() {
        match model {
            FitModel::Overdamped => {
                basis[(i, 0)] = (-rates[0] * t).exp();
                basis[(i, 1)] = (-rates[1] * t).exp();
                basis[(i, 2)] = (-rates[2] * t).exp();
            }
            _ => {
                let e1 = 2.0 * (-rates[1] * t).exp();
                basis[(i, 0)] = (-rates[0] * t).exp();
                basis[(i, 1)] = e1 * (rates[2] * t).cos();
                basis[(i, 2)] = e1 * (rates[2] * t).sin();
            }
        }
    }
    let svd = basis.clone().svd(true, true);
    let mut th = vec![0.0; N_PARAMS];
    let mut rss = 0.0;
    for c in 0..3 {
        let y = DVector::from_iterator(n, data.iter().map(|s| s[c]));
        let x = svd.solve(&y, 1e-10).ok()?;
        rss += (&basis * &x - &y).norm_squared();
        th[c] = x[0];
        th[3 + c] = x[1];
        th[6 + c] = x[2];
    }
    th[9] = rates[0];
    th[10] = rates[1];
    th[11] = rates[2];
    Some((th, rss))
}

/// Dominant angular frequency of the mean-subtracted data from a zero-padded
/// discrete Fourier scan up to the Nyquist frequency.
/// Frequencies of the strongest local maxima of the periodogram, strongest
/// first. A slowly decaying component leaks power into the lowest bins, so a
/// weak oscillation may only show up as a secondary peak.
fn candidate_frequencies(times: &[f64], data: &[[f64; 3]], count: usize) -> Vec<f64> {
    let n = times.len() as f64;
    let span = times[times.len() - 1] - times[0];
    let dt = span / (n - 1.0);
    let nyquist = PI / dt;
    let mean: [f64; 3] = [0, 1, 2].map(|c| data.iter().map(|s| s[c]).sum::<f64>() / n);
    let n_scan = 2048;
    let spectrum: Vec<(f64, f64)> = (1..=n_scan)
        .map(|q| {
            let om = nyquist * q as f64 / n_scan as f64;
            let mut power = 0.0;
            for c in 0..3 {
                let mut z = Complex64::new(0.0, 0.0);
                for (t, s) in times.iter().zip(data) {
                    z += Complex64::from_polar(s[c] - mean[c], om * t);
                }
                power += z.norm_sqr();
            }
            (power, om)
        })
        .collect();
    let mut peaks: Vec<(f64, f64)> = (0..spectrum.len())
        .filter(|&i| {
            let p = spectrum[i].0;
            (i == 0 || spectrum[i - 1].0 < p) && (i + 1 == spectrum.len() || spectrum[i + 1].0 <= p)
        })
        .map(|i| spectrum[i])
        .collect();
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<f64> = peaks.iter().take(count).map(|p| p.1).collect();
    if out.is_empty() {
        out.push(nyquist / 2.0);
    }
    out
}

fn rate_grid(span: f64) -> Vec<f64> {
    // 0 and a geometric ladder from 0.05/span to 20/span.
    std::iter::once(0.0)
        .chain((0..10).map(|i| 0.05 * 400f64.powf(i as f64 / 9.0) / span))
        .collect()
}

fn best_projection(
    model: FitModel,
    times: &[f64],
    data: &[[f64; 3]],
    rates: impl Iterator<Item = [f64; 3]>,
) -> Option<Vec<f64>> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in rates {
        if let Some((th, rss)) = project_amplitudes(model, times, data, r) {
            if best.as_ref().is_none_or(|b| rss < b.1) {
                best = Some((th, rss));
            }
        }
    }
    best.map(|b| b.0)
}

fn overdamped_guess(times: &[f64], data: &[[f64; 3]]) -> Vec<f64> {
    let grid = rate_grid(times[times.len() - 1] - times[0]);
    let rates = grid.iter().flat_map(|&l0| {
        let grid = &grid;
        grid.iter()
            .flat_map(move |&la| grid.iter().map(move |&lb| [l0, la, lb]))
    });
    best_projection(
        FitModel::Overdamped,
        times,
        data,
        rates.filter(|[l0, la, lb]| la < lb && l0 != la && l0 != lb),
    )
    .unwrap_or_else(|| vec![0.0; N_PARAMS])
}

/// One starting point per distinct periodogram peak, from the raw data and from
/// what the best purely decaying model `smooth` leaves over. The latter exposes
/// oscillations far weaker than the decay. Frequencies below half a period per
/// window are left to the overdamped model.
fn oscillating_guesses(times: &[f64], data: &[[f64; 3]], smooth: &[f64]) -> Vec<Vec<f64>> {
    let span = times[times.len() - 1] - times[0];
    let pb = Problem {
        model: FitModel::Overdamped,
        times,
        data,
    };
    let r = pb.residuals(smooth);
    let leftover: Vec<[f64; 3]> = (0..times.len()).map(|i| [0, 1, 2].map(|c| -r[3 * i + c])).collect();
    let mut freqs: Vec<f64> = Vec::new();
    for om in candidate_frequencies(times, data, 3)
        .into_iter()
        .chain(candidate_frequencies(times, &leftover, 3))
    {
        if om >= PI / span && freqs.iter().all(|f| (f - om).abs() > 0.05 * f) {
            freqs.push(om);
        }
    }
    let grid = rate_grid(span);
    freqs
        .iter()
        .filter_map(|&om0| {
            let rates = (0..=20).flat_map(|f| {
                let om = om0 * (0.5 + 0.05 * f as f64);
                let grid = &grid;
                grid.iter()
                    .flat_map(move |&l0| grid.iter().map(move |&l1| [l0, l1, om]))
            });
            best_projection(FitModel::Oscillating, times, data, rates)
        })
        .collect()
}

fn validate(traj: &SpinTrajectory) -> Result<(), FitError> {
    if traj.times.len() != traj.polarization.len() {
        return Err(FitError::InvalidInput("times and samples differ in length".into()));
    }
    let got = 3 * traj.times.len();
    if got < N_PARAMS {
        return Err(FitError::InsufficientData { needed: N_PARAMS, got });
    }
    if traj.times.iter().any(|t| !t.is_finite()) || traj.polarization.iter().flatten().any(|x| !x.is_finite()) {
        return Err(FitError::InvalidInput("non-finite sample".into()));
    }
    if traj.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FitError::InvalidInput("times must be strictly increasing".into()));
    }
    Ok(())
}

fn finish(pb: &Problem, out: LmOutcome, cfg: &FitConfig) -> FitResult {
    let n = (3 * pb.times.len()) as f64;
    let residual_rms = (2.0 * out.cost / n).sqrt();
    FitResult {
        decomposition: decomposition_from(pb.model, &out.theta),
        model: pb.model,
        residual_rms,
        iterations: out.iterations,
        converged: out.converged && residual_rms <= cfg.residual_threshold,
    }
}

/// Fits `s(t) = s0 e^{−λ0 t} + s+ e^{−(λ1+iω)t} + c.c.` (or the overdamped
/// variant) to `traj`. With `init` the fit starts there and keeps its variant;
/// otherwise it starts from a Fourier/variable-projection estimate and falls
/// back to the overdamped model when no oscillation is resolved.
pub fn fit_modes(
    traj: &SpinTrajectory,
    init: Option<&ModeDecomposition>,
    cfg: &FitConfig,
) -> Result<FitResult, FitError> {
    validate(traj)?;
    let (times, data) = (&traj.times[..], &traj.polarization[..]);
    let max_abs = data.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    if max_abs < cfg.noise_floor {
        return Err(FitError::DegenerateData);
    }
    let n = times.len() as f64;
    let mean: [f64; 3] = [0, 1, 2].map(|c| data.iter().map(|s| s[c]).sum::<f64>() / n);
    let spread = data
        .iter()
        .flat_map(|s| (0..3).map(move |c| (s[c] - mean[c]).abs()))
        .fold(0.0, f64::max);
    if spread <= 1e-12 * max_abs {
        // Static fixed point.
        let mut th = vec![0.0; N_PARAMS];
        th[..3].copy_from_slice(&mean);
        let pb = Problem {
            model: FitModel::Static,
            times,
            data,
        };
        let cost = 0.5 * pb.residuals(&th).norm_squared();
        return Ok(finish(
            &pb,
            LmOutcome {
                theta: th,
                cost,
                iterations: 0,
                converged: true,
            },
            cfg,
        ));
    }

    let run = |model: FitModel, th0: Vec<f64>| {
        let pb = Problem { model, times, data };
        let out = levenberg_marquardt(&pb, &th0, cfg.max_iterations);
        finish(&pb, out, cfg)
    };

    let result = match init {
        Some(d) => {
            let (model, th0) = theta_from(d);
            run(model, th0)
        }
        None => {
            let smooth = overdamped_guess(times, data);
            let osc = oscillating_guesses(times, data, &smooth)
                .into_iter()
                .map(|g| run(FitModel::Oscillating, g))
                .min_by(|a, b| a.residual_rms.total_cmp(&b.residual_rms));
            let span = times[times.len() - 1] - times[0];
            match osc {
                Some(osc) if osc.converged && osc.decomposition.omega() >= PI / (4.0 * span) => osc,
                osc => {
                    let od = run(FitModel::Overdamped, smooth);
                    match osc {
                        Some(osc) if osc.residual_rms <= od.residual_rms => osc,
                        _ => od,
                    }
                }
            }
        }
    };
    let finite = result.residual_rms.is_finite()
        && result.decomposition.s0.iter().all(|x| x.is_finite())
        && result.decomposition.lambda0.is_finite();
    if !finite || (!result.converged && result.residual_rms > cfg.residual_threshold) {
        return Err(FitError::FitDiverged {
            residual_rms: result.residual_rms,
        });
    }
    Ok(result)
}

/// Evaluates the fitted model with every decay rate set to zero. Meaningful
/// only for a converged fit.
pub fn rescale(fit: &FitResult, times: &[f64]) -> RescaledTrajectory {
    rescale_decomposition(&fit.decomposition, times)
}

pub fn rescale_decomposition(d: &ModeDecomposition, times: &[f64]) -> RescaledTrajectory {
    RescaledTrajectory {
        times: times.to_vec(),
        polarization: times.iter().map(|&t| d.evaluate_rescaled(t)).collect(),
    }
}

/// Arithmetic mean over the samples.
pub fn time_average(rt: &RescaledTrajectory) -> [f64; 3] {
    let n = rt.polarization.len() as f64;
    [0, 1, 2].map(|c| rt.polarization.iter().map(|s| s[c]).sum::<f64>() / n)
}

/// Mean of the rescaled trajectory over `times` without forming the samples:
/// `s0 + 2 Re(s+ · (1/M) Σ e^{−iωt_j})`, using the geometric sum when the
/// sampling is uniform.
pub fn rescaled_average(d: &ModeDecomposition, times: &[f64]) -> [f64; 3] {
    let m = times.len();
    let mut s = d.s0;
    match d.transient {
        Transient::Oscillating { s_plus, omega, .. } => {
            let phase_mean = phase_mean(omega, times);
            for c in 0..3 {
                s[c] += 2.0 * (s_plus[c] * phase_mean).re;
            }
        }
        Transient::Overdamped { s_a, s_b, .. } => {
            for c in 0..3 {
                s[c] += s_a[c] + s_b[c];
            }
        }
    }
    debug_assert!(m > 0);
    s
}

fn phase_mean(omega: f64, times: &[f64]) -> Complex64 {
    let m = times.len();
    let uniform = m > 1 && {
        let dt = times[1] - times[0];
        times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1e-300))
    };
    if uniform {
        let dt = times[1] - times[0];
        let q = Complex64::from_polar(1.0, -omega * dt);
        let first = Complex64::from_polar(1.0, -omega * times[0]);
        if (q - 1.0).norm() > 1e-8 {
            return first * (Complex64::new(1.0, 0.0) - q.powu(m as u32)) / ((Complex64::new(1.0, 0.0) - q) * m as f64);
        }
    }
    times
        .iter()
        .map(|&t| Complex64::from_polar(1.0, -omega * t))
        .sum::<Complex64>()
        / m as f64
}
