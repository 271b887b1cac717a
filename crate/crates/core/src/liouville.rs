//! Noise-averaged dynamics: the 3×3 Liouvillian acting on the polarization,
//! its (left and right) eigensystem, the mode decomposition of the quench
//! trajectory, and exceptional-point search.
//!
//! `ds/dt = L s` with
//! `L = 2·[[−wy−wz, −hz, hy], [hz, −wx−wz, −hx], [−hy, hx, −wx−wy]]`.
//! Eigenvalues are written `μ = −λ`; the oscillating pair is `μ± = −λ1 ∓ iω`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{bloch_vector, BlochVector, Momentum, MomentumGrid, NoiseStrengths, QahParams};
use crate::sse::SpinTrajectory;

type CVec3 = Vector3<Complex64>;
type CMat3 = Matrix3<Complex64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiouvilleError {
    #[error("Liouvillian is defective (omega = {omega:.3e}, eigenvector angle = {angle:.3e})")]
    Defective { omega: f64, angle: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Liouvillian {
    matrix: Matrix3<f64>,
    h: BlochVector,
    w: NoiseStrengths,
}

impl Liouvillian {
    pub fn new(h: BlochVector, w: NoiseStrengths) -> Self {
        let (hx, hy, hz) = (h.hx, h.hy, h.hz);
        let (wx, wy, wz) = (w.wx, w.wy, w.wz);
        #[rustfmt::skip]
        let matrix = Matrix3::new(
            -wy - wz, -hz,      hy,
            hz,       -wx - wz, -hx,
            -hy,      hx,       -wx - wy,
        ) * 2.0;
        Self { matrix, h, w }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn bloch(&self) -> BlochVector {
        self.h
    }

    pub fn noise(&self) -> NoiseStrengths {
        self.w
    }

    pub fn eigenvalues(&self) -> [Complex64; 3] {
        let ev = self.matrix.complex_eigenvalues();
        [ev[0], ev[1], ev[2]]
    }

    /// `exp(L t)`.
    pub fn propagator(&self, t: f64) -> Matrix3<f64> {
        (self.matrix * t).exp()
    }

    /// Cubic discriminant of the traceless, Frobenius-normalized Liouvillian.
    /// Negative where a complex-conjugate pair exists, positive where all three
    /// eigenvalues are real, zero at exceptional points.
    pub fn normalized_discriminant(&self) -> f64 {
        let shift = self.matrix.trace() / 3.0;
        let mut n = self.matrix - Matrix3::identity() * shift;
        let f = n.norm();
        if f == 0.0 {
            return 0.0;
        }
        n /= f;
        let p = -0.5 * (n * n).trace();
        let q = -n.determinant();
        -4.0 * p * p * p - 27.0 * q * q
    }

    fn scale(&self) -> f64 {
        self.matrix.norm().max(f64::MIN_POSITIVE)
    }
}

pub fn build_liouvillian(k: Momentum, p: &QahParams, w: &NoiseStrengths) -> Liouvillian {
    Liouvillian::new(bloch_vector(k, p), *w)
}

/// Largest `|Im μ|` of the Liouvillian at `k`.
pub fn oscillation_frequency(k: Momentum, p: &QahParams, w: &NoiseStrengths) -> f64 {
    build_liouvillian(k, p, w)
        .eigenvalues()
        .iter()
        .map(|z| z.im.abs())
        .fold(0.0, f64::max)
}

/// Thresholds deciding when a Liouvillian is treated as defective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpTolerance {
    /// Absolute bound on the oscillation frequency (kHz).
    pub omega: f64,
    /// Bound on the angle (rad) between the two closest eigenvectors.
    pub angle: f64,
}

impl Default for EpTolerance {
    fn default() -> Self {
        Self {
            omega: 1e-3,
            angle: 1e-2,
        }
    }
}

impl EpTolerance {
    pub fn for_params(p: &QahParams) -> Self {
        Self {
            omega: 1e-3 * p.xi0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrumKind {
    /// One real eigenvalue and a complex-conjugate pair.
    Oscillating,
    /// Three real eigenvalues.
    Overdamped,
}

/// Right and left eigenvectors with `lᵢ·rⱼ = δᵢⱼ` (bilinear, no conjugation).
///
/// Index 0 is the steady-state-like mode. For oscillating spectra index 1 is
/// `μ+ = −λ1 − iω` and index 2 its conjugate; for overdamped spectra indices 1
/// and 2 hold the remaining real modes in order of increasing decay rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub mu: [Complex64; 3],
    pub right: [CVec3; 3],
    pub left: [CVec3; 3],
    pub kind: SpectrumKind,
    /// Smallest angle between two right eigenvectors.
    pub coalescence_angle: f64,
    /// 2-norm condition number of the right-eigenvector matrix.
    pub condition_number: f64,
}

impl EigenSystem {
    pub fn lambda0(&self) -> f64 {
        -self.mu[0].re
    }

    pub fn lambda1(&self) -> f64 {
        -self.mu[1].re
    }

    pub fn omega(&self) -> f64 {
        match self.kind {
            SpectrumKind::Oscillating => -self.mu[1].im,
            SpectrumKind::Overdamped => 0.0,
        }
    }

    /// `max |lᵢ·rⱼ − δᵢⱼ|`.
    pub fn biorthonormality_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.left[i].dot(&self.right[j]) - d).norm());
            }
        }
        worst
    }
}

fn hermitian_angle(a: &CVec3, b: &CVec3) -> f64 {
    let c = a.dotc(b).norm() / (a.norm() * b.norm());
    c.min(1.0).acos()
}

fn null_vectors(m: &CMat3, rank_tol: f64) -> (Vec<CVec3>, CVec3) {
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested V^H");
    let sv = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    let vec_of = |i: usize| -> CVec3 { vt.row(i).adjoint() };
    let null = idx.iter().filter(|&&i| sv[i] <= rank_tol).map(|&i| vec_of(i)).collect();
    (null, vec_of(idx[0]))
}

/// Multiplies by a phase so the largest component is real and positive.
fn fix_phase(v: CVec3) -> CVec3 {
    let big = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
    if big.norm() == 0.0 {
        return v;
    }
    let ph = big.conj() / big.norm();
    let u = v * ph;
    u / Complex64::new(u.norm(), 0.0)
}

fn realify(v: CVec3) -> CVec3 {
    let u = fix_phase(v).map(|z| Complex64::new(z.re, 0.0));
    u / Complex64::new(u.norm(), 0.0)
}

struct Groups {
    /// Eigenvalue groups as (mean, member indices).
    groups: Vec<(Complex64, Vec<usize>)>,
}

fn group_eigenvalues(mu: &[Complex64; 3], tol: f64) -> Groups {
    let mut groups: Vec<(Complex64, Vec<usize>)> = Vec::new();
    for i in 0..3 {
        match groups
            .iter_mut()
            .find(|(_, m)| m.iter().any(|&j| (mu[j] - mu[i]).norm() <= tol))
        {
            Some((_, m)) => m.push(i),
            None => groups.push((mu[i], vec![i])),
        }
    }
    for (mean, m) in groups.iter_mut() {
        *mean = m.iter().map(|&j| mu[j]).sum::<Complex64>() / m.len() as f64;
    }
    Groups { groups }
}

/// Frequency and eigenvector coalescence measure, computed without requiring a
/// diagonalizable matrix. Used by exceptional-point detection.
pub fn ep_metrics(l: &Liouvillian) -> (f64, f64) {
    let mu = l.eigenvalues();
    let omega = mu.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let scale = l.scale();
    let grouped = group_eigenvalues(&mu, 1e-7 * scale);
    let cm = l.matrix.map(|x| Complex64::new(x, 0.0));
    for (mean, members) in &grouped.groups {
        if members.len() > 1 {
            let (null, _) = null_vectors(&(cm - CMat3::identity() * *mean), 1e-6 * scale);
            if null.len() < members.len() {
                return (omega, 0.0);
            }
        }
    }
    // Closest distinct pair.
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let &(i, j) = pairs
        .iter()
        .min_by(|a, b| (mu[a.0] - mu[a.1]).norm().total_cmp(&(mu[b.0] - mu[b.1]).norm()))
        .unwrap();
    if (mu[i] - mu[j]).norm() <= 1e-7 * scale {
        // Diagonalizable degeneracy.
        return (omega, PI / 2.0);
    }
    let (_, ri) = null_vectors(&(cm - CMat3::identity() * mu[i]), 0.0);
    let (_, rj) = null_vectors(&(cm - CMat3::identity() * mu[j]), 0.0);
    (omega, hermitian_angle(&ri, &rj))
}

/// Full eigensystem. Fails with [`LiouvilleError::Defective`] at or near an
/// exceptional point.
pub fn eigensystem(l: &Liouvillian, tol: &EpTolerance) -> Result<EigenSystem, LiouvilleError> {
    let raw = l.eigenvalues();
    let scale = l.scale();
    let omega_max = raw.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let oscillating = omega_max > 1e-13 * scale;
    let cm = l.matrix.map(|x| Complex64::new(x, 0.0));
    let cmt = cm.transpose();
    let id = CMat3::identity();

    // Order modes.
    let mut mu = raw;
    if oscillating {
        let i0 = (0..3)
            .min_by(|&a, &b| raw[a].im.abs().total_cmp(&raw[b].im.abs()))
            .unwrap();
        let others: Vec<usize> = (0..3).filter(|&i| i != i0).collect();
        let plus = if raw[others[0]].im < 0.0 { others[0] } else { others[1] };
        mu = [Complex64::new(raw[i0].re, 0.0), raw[plus], raw[plus].conj()];
    } else {
        for z in mu.iter_mut() {
            z.im = 0.0;
        }
    }

    let defective = |angle: f64| LiouvilleError::Defective {
        omega: if oscillating { omega_max } else { 0.0 },
        angle,
    };

    let mut right = [CVec3::zeros(); 3];
    let grouped = group_eigenvalues(&mu, 1e-7 * scale);
    for (mean, members) in &grouped.groups {
        let m = cm - id * *mean;
        if members.len() == 1 {
            let (_, v) = null_vectors(&m, 0.0);
            right[members[0]] = v;
        } else {
            let (null, _) = null_vectors(&m, 1e-6 * scale);
            if null.len() < members.len() {
                return Err(defective(0.0));
            }
            for (slot, v) in members.iter().zip(null) {
                right[*slot] = v;
            }
        }
    }

    if oscillating {
        right[0] = realify(right[0]);
        right[1] = fix_phase(right[1]);
        right[2] = right[1].map(|z| z.conj());
    } else {
        for r in right.iter_mut() {
            *r = realify(*r);
        }
        // Mode 0 is the one most aligned with the field; ties go to the slowest decay.
        let hhat = l.h.unit().unwrap_or([0.0; 3]);
        let overlap = |r: &CVec3| (r[0].re * hhat[0] + r[1].re * hhat[1] + r[2].re * hhat[2]).abs();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let (oa, ob) = (overlap(&right[a]), overlap(&right[b]));
            if (oa - ob).abs() > 1e-9 {
                ob.total_cmp(&oa)
            } else {
                mu[b].re.total_cmp(&mu[a].re)
            }
        });
        let (mut rest_a, mut rest_b) = (order[1], order[2]);
        if mu[rest_a].re < mu[rest_b].re {
            std::mem::swap(&mut rest_a, &mut rest_b);
        }
        let perm = [order[0], rest_a, rest_b];
        mu = perm.map(|i| mu[i]);
        right = perm.map(|i| right[i]);
    }

    let pairs = [(0, 1), (0, 2), (1, 2)];
    let angle = pairs
        .iter()
        .map(|&(i, j)| hermitian_angle(&right[i], &right[j]))
        .fold(f64::INFINITY, f64::min);
    let near_ep_omega = if oscillating { omega_max } else { 0.0 };
    if near_ep_omega < tol.omega && angle < tol.angle {
        return Err(defective(angle));
    }

    let rmat = CMat3::from_columns(&right);
    let sv = rmat.singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };

    // Left eigenvectors from the transposed problem, scaled so that l·r = 1.
    let mut left = [CVec3::zeros(); 3];
    let degenerate = grouped.groups.iter().any(|(_, m)| m.len() > 1);
    if degenerate {
        let inv = rmat.try_inverse().ok_or_else(|| defective(angle))?;
        for (i, l) in left.iter_mut().enumerate() {
            *l = inv.row(i).transpose();
        }
    } else {
        for i in 0..3 {
            let (_, v) = null_vectors(&(cmt - id * mu[i]), 0.0);
            let d = v.dot(&right[i]);
            if d.norm() < 1e-12 {
                return Err(defective(angle));
            }
            left[i] = v / d;
        }
        if oscillating {
            left[2] = left[1].map(|z| z.conj());
        }
    }

    Ok(EigenSystem {
        mu,
        right,
        left,
        kind: if oscillating {
            SpectrumKind::Oscillating
        } else {
            SpectrumKind::Overdamped
        },
        coalescence_angle: angle,
        condition_number,
    })
}

/// Transient part of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transient {
    /// `s+ e^{−(λ1 + iω)t} + c.c.`
    Oscillating {
        s_plus: [Complex64; 3],
        lambda1: f64,
        omega: f64,
    },
    /// `s_a e^{−λa t} + s_b e^{−λb t}`
    Overdamped {
        s_a: [f64; 3],
        s_b: [f64; 3],
        lambda_a: f64,
        lambda_b: f64,
    },
}

/// `s(t) = s0 e^{−λ0 t} + transient(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDecomposition {
    pub s0: [f64; 3],
    pub lambda0: f64,
    pub transient: Transient,
}

impl ModeDecomposition {
    pub fn omega(&self) -> f64 {
        match self.transient {
            Transient::Oscillating { omega, .. } => omega,
            Transient::Overdamped { .. } => 0.0,
        }
    }

    pub fn lambda1(&self) -> Option<f64> {
        match self.transient {
            Transient::Oscillating { lambda1, .. } => Some(lambda1),
            Transient::Overdamped { .. } => None,
        }
    }

    pub fn s_plus(&self) -> Option<[Complex64; 3]> {
        match self.transient {
            Transient::Oscillating { s_plus, .. } => Some(s_plus),
            Transient::Overdamped { .. } => None,
        }
    }

    pub fn is_overdamped(&self) -> bool {
        matches!(self.transient, Transient::Overdamped { .. })
    }

    pub fn evaluate(&self, t: f64) -> [f64; 3] {
        self.eval_with(t, true)
    }

    /// Trajectory with every decay rate set to zero.
    pub fn evaluate_rescaled(&self, t: f64) -> [f64; 3] {
        self.eval_with(t, false)
    }

    fn eval_with(&self, t: f64, decay: bool) -> [f64; 3] {
        let d = |rate: f64| if decay { (-rate * t).exp() } else { 1.0 };
        let e0 = d(self.lambda0);
        let mut s = self.s0.map(|x| x * e0);
        match self.transient {
            Transient::Oscillating { s_plus, lambda1, omega } => {
                let ph = Complex64::from_polar(d(lambda1), -omega * t);
                for c in 0..3 {
                    s[c] += 2.0 * (s_plus[c] * ph).re;
                }
            }
            Transient::Overdamped {
                s_a,
                s_b,
                lambda_a,
                lambda_b,
            } => {
                let (ea, eb) = (d(lambda_a), d(lambda_b));
                for c in 0..3 {
                    s[c] += s_a[c] * ea + s_b[c] * eb;
                }
            }
        }
        s
    }
}

/// Projects `s_init` onto the eigenmodes of `l`.
pub fn mode_decomposition(
    l: &Liouvillian,
    s_init: [f64; 3],
    tol: &EpTolerance,
) -> Result<ModeDecomposition, LiouvilleError> {
    if s_init.iter().any(|x| !x.is_finite()) {
        return Err(LiouvilleError::InvalidInput(
            "initial polarization is not finite".into(),
        ));
    }
    let es = eigensystem(l, tol)?;
    let s = CVec3::new(s_init[0].into(), s_init[1].into(), s_init[2].into());
    let coeff = |i: usize| es.left[i].dot(&s);
    let mode = |i: usize| -> [Complex64; 3] {
        let c = coeff(i);
        let r = es.right[i] * c;
        [r[0], r[1], r[2]]
    };
    let s0 = mode(0).map(|z| z.re);
    let transient = match es.kind {
        SpectrumKind::Oscillating => Transient::Oscillating {
            s_plus: mode(1),
            lambda1: es.lambda1(),
            omega: es.omega(),
        },
        SpectrumKind::Overdamped => Transient::Overdamped {
            s_a: mode(1).map(|z| z.re),
            s_b: mode(2).map(|z| z.re),
            lambda_a: -es.mu[1].re,
            lambda_b: -es.mu[2].re,
        },
    };
    Ok(ModeDecomposition {
        s0,
        lambda0: es.lambda0(),
        transient,
    })
}

/// Decomposition of the quench from `|↓⟩` at momentum `k`.
pub fn quench_decomposition(
    k: Momentum,
    p: &QahParams,
    w: &NoiseStrengths,
) -> Result<ModeDecomposition, LiouvilleError> {
    mode_decomposition(
        &build_liouvillian(k, p, w),
        [0.0, 0.0, -1.0],
        &EpTolerance::for_params(p),
    )
}

/// `s(t) = exp(L t) s_init`, valid at exceptional points as well.
pub fn exact_evolution(
    k: Momentum,
    p: &QahParams,
    w: &NoiseStrengths,
    s_init: [f64; 3],
    times: &[f64],
) -> SpinTrajectory {
    let l = build_liouvillian(k, p, w);
    let s = Vector3::from(s_init);
    let polarization = times
        .iter()
        .map(|&t| {
            let v = l.propagator(t) * s;
            [v[0], v[1], v[2]]
        })
        .collect();
    SpinTrajectory {
        momentum: k,
        times: times.to_vec(),
        polarization,
    }
}

/// Where an exceptional point candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpOrigin {
    /// Zero of the discriminant between two grid nodes of opposite sign.
    SignChange,
    /// Refined local minimum of the discriminant magnitude.
    Touching,
    /// Momentum where the in-plane field vanishes.
    Charge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalPoint {
    pub momentum: Momentum,
    pub omega: f64,
    pub angle: f64,
    pub origin: EpOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpCluster {
    pub points: Vec<ExceptionalPoint>,
    pub centroid: Momentum,
    /// Largest distance from the centroid to a member.
    pub extent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpSearch {
    pub kmin: f64,
    pub kmax: f64,
    pub grid_n: usize,
    pub tol: EpTolerance,
}

impl EpSearch {
    pub fn new(kmin: f64, kmax: f64, grid_n: usize, p: &QahParams) -> Self {
        Self {
            kmin,
            kmax,
            grid_n,
            tol: EpTolerance::for_params(p),
        }
    }
}

/// Locates exceptional points of the Liouvillian inside the search window and
/// groups nearby ones into clusters.
pub fn find_exceptional_points(
    p: &QahParams,
    w: &NoiseStrengths,
    search: &EpSearch,
) -> Result<Vec<EpCluster>, LiouvilleError> {
    let grid = MomentumGrid::square(search.kmin, search.kmax, search.grid_n)
        .map_err(|e| LiouvilleError::InvalidInput(e.to_string()))?;
    let disc = |k: Momentum| build_liouvillian(k, p, w).normalized_discriminant();
    let (nx, ny) = (grid.nx(), grid.ny());
    let d: Vec<f64> = (0..grid.len()).map(|i| disc(grid.at(i))).collect();
    let dv = |ix: usize, iy: usize| d[iy * nx + ix];

    let mut candidates: Vec<(Momentum, EpOrigin)> = Vec::new();
    let bisect = |a: Momentum, b: Momentum| -> Momentum {
        let (mut lo, mut hi) = (0.0, 1.0);
        let at = |t: f64| Momentum::new(a.kx + t * (b.kx - a.kx), a.ky + t * (b.ky - a.ky));
        let s_lo = disc(a).signum();
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if disc(at(mid)).signum() == s_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    };
    for iy in 0..ny {
        for ix in 0..nx {
            let here = grid.momentum(ix, iy);
            if dv(ix, iy) == 0.0 {
                candidates.push((here, EpOrigin::SignChange));
                continue;
            }
            let neighbors = [(ix + 1, iy), (ix, iy + 1)];
            for (jx, jy) in neighbors {
                if jx < nx && jy < ny && dv(ix, iy) * dv(jx, jy) < 0.0 {
                    candidates.push((bisect(here, grid.momentum(jx, jy)), EpOrigin::SignChange));
                }
            }
        }
    }

    let h = grid.spacing();
    for iy in 0..ny {
        for ix in 0..nx {
            let v = dv(ix, iy).abs();
            let mut is_min = true;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                    if (dx, dy) == (0, 0) || jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                        continue;
                    }
                    if dv(jx as usize, jy as usize).abs() < v {
                        is_min = false;
                    }
                }
            }
            if is_min {
                let k = pattern_search(|k| disc(k).abs(), grid.momentum(ix, iy), 0.5 * h, &grid);
                candidates.push((k, EpOrigin::Touching));
            }
        }
    }
    for k in crate::model::charge_momenta(&grid) {
        candidates.push((k, EpOrigin::Charge));
    }

    let mut accepted: Vec<ExceptionalPoint> = Vec::new();
    for (k, origin) in candidates {
        let (omega, angle) = ep_metrics(&build_liouvillian(k, p, w));
        if omega < search.tol.omega && angle < search.tol.angle {
            accepted.push(ExceptionalPoint {
                momentum: k,
                omega,
                angle,
                origin,
            });
        }
    }
    Ok(cluster(accepted, 1.5 * h))
}

fn pattern_search(f: impl Fn(Momentum) -> f64, start: Momentum, step: f64, grid: &MomentumGrid) -> Momentum {
    let clamp = |k: Momentum| {
        Momentum::new(
            k.kx.clamp(grid.kx[0], grid.kx[grid.nx() - 1]),
            k.ky.clamp(grid.ky[0], grid.ky[grid.ny() - 1]),
        )
    };
    let mut best = start;
    let mut fbest = f(best);
    let mut s = step;
    let d = std::f64::consts::FRAC_1_SQRT_2;
    let dirs = [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (d, d),
        (-d, d),
        (d, -d),
        (-d, -d),
    ];
    let mut evals = 0;
    while s > 1e-13 && evals < 4000 {
        let mut improved = false;
        for (dx, dy) in dirs {
            let k = clamp(Momentum::new(best.kx + s * dx, best.ky + s * dy));
            let v = f(k);
            evals += 1;
            if v < fbest {
                best = k;
                fbest = v;
                improved = true;
            }
        }
        if !improved {
            s *= 0.5;
        }
    }
    best
}

fn cluster(points: Vec<ExceptionalPoint>, link: f64) -> Vec<EpCluster> {
    let n = points.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if points[i].momentum.distance(&points[j].momentum) <= link {
                let (a, b) = (root(&mut label, i), root(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut out: Vec<(usize, Vec<ExceptionalPoint>)> = Vec::new();
    for (i, &pt) in points.iter().enumerate().take(n) {
        let r = root(&mut label, i);
        match out.iter_mut().find(|(id, _)| *id == r) {
            Some((_, v)) => v.push(pt),
            None => out.push((r, vec![pt])),
        }
    }
    out.into_iter()
        .map(|(_, pts)| {
            let m = pts.len() as f64;
            let cx = pts.iter().map(|e| e.momentum.kx).sum::<f64>() / m;
            let cy = pts.iter().map(|e| e.momentum.ky).sum::<f64>() / m;
            let centroid = Momentum::new(cx, cy);
            let extent = pts.iter().map(|e| e.momentum.distance(&centroid)).fold(0.0, f64::max);
            EpCluster {
                points: pts,
                centroid,
                extent,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_noise_field_along_z() {
        let l = Liouvillian::new(
            BlochVector {
                hx: 0.0,
                hy: 0.0,
                hz: 1.0,
            },
            NoiseStrengths::zero(),
        );
        let es = eigensystem(&l, &EpTolerance::default()).unwrap();
        assert_eq!(es.kind, SpectrumKind::Oscillating);
        assert_abs_diff_eq!(es.mu[0].norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(es.omega(), 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(es.lambda1(), 0.0, epsilon = 1e-13);
        assert!(es.biorthonormality_residual() < 1e-12);
    }

    #[test]
    fn eigenpairs_satisfy_definition() {
        let l = Liouvillian::new(
            BlochVector {
                hx: 0.3,
                hy: -0.2,
                hz: 0.7,
            },
            NoiseStrengths::new(0.1, 0.05, 0.2).unwrap(),
        );
        let es = eigensystem(&l, &EpTolerance::default()).unwrap();
        let cm = l.matrix().map(|x| Complex64::new(x, 0.0));
        for i in 0..3 {
            assert!((cm * es.right[i] - es.right[i] * es.mu[i]).norm() < 1e-12);
            assert!((cm.transpose() * es.left[i] - es.left[i] * es.mu[i]).norm() < 1e-11);
        }
        assert!(es.biorthonormality_residual() < 1e-11);
    }

    #[test]
    fn decomposition_reproduces_initial_state() {
        let l = Liouvillian::new(
            BlochVector {
                hx: 0.19,
                hy: -0.05,
                hz: 0.7,
            },
            NoiseStrengths::new(0.05, 0.0, 0.01).unwrap(),
        );
        let d = mode_decomposition(&l, [0.0, 0.0, -1.0], &EpTolerance::default()).unwrap();
        let s = d.evaluate(0.0);
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[2], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn overdamped_spectrum_is_handled() {
        // Strong x-noise with a weak field: all eigenvalues real.
        let l = Liouvillian::new(
            BlochVector {
                hx: 0.0,
                hy: 0.0,
                hz: 0.1,
            },
            NoiseStrengths::new(1.6, 0.0, 0.0).unwrap(),
        );
        let es = eigensystem(&l, &EpTolerance::default()).unwrap();
        assert_eq!(es.kind, SpectrumKind::Overdamped);
        assert!(l.normalized_discriminant() > 0.0);
        let d = mode_decomposition(&l, [0.0, 0.0, -1.0], &EpTolerance::default()).unwrap();
        assert!(d.is_overdamped());
        let exact = l.propagator(1.3) * Vector3::new(0.0, 0.0, -1.0);
        let s = d.evaluate(1.3);
        for c in 0..3 {
            assert_abs_diff_eq!(s[c], exact[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn jordan_point_is_defective() {
        // xy block [[-0.8, -hz], [hz, -2.4]]·2 has a double eigenvalue at |hz| = 0.8.
        let l = Liouvillian::new(
            BlochVector {
                hx: 0.0,
                hy: 0.0,
                hz: -0.8,
            },
            NoiseStrengths::new(1.6, 0.0, 0.8).unwrap(),
        );
        assert!(matches!(
            eigensystem(&l, &EpTolerance::default()),
            Err(LiouvilleError::Defective { .. })
        ));
        let (omega, angle) = ep_metrics(&l);
        assert!(omega < 1e-3 && angle < 1e-2);
    }

    #[test]
    fn discriminant_sign_matches_spectrum() {
        let osc = Liouvillian::new(
            BlochVector {
                hx: 0.2,
                hy: 0.1,
                hz: 0.5,
            },
            NoiseStrengths::new(0.05, 0.0, 0.01).unwrap(),
        );
        assert!(osc.normalized_discriminant() < 0.0);
    }
}
