//! Two-band quantum anomalous Hall model on the square lattice.
//!
//! Energies are in kHz and times in ms. The Bloch Hamiltonian is
//! `H(k) = h(k)·σ` with
//! `h = (ξso sin kx, ξso sin ky, mz − ξ0 cos kx − ξ0 cos ky)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contour::{self, Contour};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bulk gap closes on the sampled lattice (min |h| = {min_norm:.3e})")]
    GapClosed { min_norm: f64 },
    #[error("grid size {0} is too small")]
    GridTooSmall(usize),
}

/// Hamiltonian parameters: hopping `xi0`, spin-orbit coupling `xi_so`, Zeeman term `mz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QahParams {
    pub xi0: f64,
    pub xi_so: f64,
    pub mz: f64,
}

impl QahParams {
    pub fn new(xi0: f64, xi_so: f64, mz: f64) -> Result<Self, ModelError> {
        let p = Self { xi0, xi_so, mz };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.xi0.is_finite() && self.xi0 > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "xi0 must be finite and positive, got {}",
                self.xi0
            )));
        }
        if !(self.xi_so.is_finite() && self.xi_so >= 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "xi_so must be finite and non-negative, got {}",
                self.xi_so
            )));
        }
        if !self.mz.is_finite() {
            return Err(ModelError::InvalidParameter("mz must be finite".into()));
        }
        Ok(())
    }

    pub fn with_mz(self, mz: f64) -> Self {
        Self { mz, ..self }
    }
}

/// Dephasing rates `w_x, w_y, w_z` (kHz).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseStrengths {
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl NoiseStrengths {
    pub fn new(wx: f64, wy: f64, wz: f64) -> Result<Self, ModelError> {
        let w = Self { wx, wy, wz };
        w.validate()?;
        Ok(w)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn isotropic(w: f64) -> Self {
        Self { wx: w, wy: w, wz: w }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("wx", self.wx), ("wy", self.wy), ("wz", self.wz)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            wx: self.wx * factor,
            wy: self.wy * factor,
            wz: self.wz * factor,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.wx, self.wy, self.wz]
    }

    pub fn is_zero(&self) -> bool {
        self.wx == 0.0 && self.wy == 0.0 && self.wz == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Momentum {
    pub kx: f64,
    pub ky: f64,
}

impl Momentum {
    pub fn new(kx: f64, ky: f64) -> Self {
        Self { kx, ky }
    }

    /// Maps both components into `[-π, π)`.
    pub fn wrapped(&self) -> Self {
        let w = |k: f64| (k + PI).rem_euclid(2.0 * PI) - PI;
        Self::new(w(self.kx), w(self.ky))
    }

    pub fn distance(&self, other: &Momentum) -> f64 {
        (self.kx - other.kx).hypot(self.ky - other.ky)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
}

impl BlochVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.hx, self.hy, self.hz]
    }

    pub fn norm(&self) -> f64 {
        (self.hx * self.hx + self.hy * self.hy + self.hz * self.hz).sqrt()
    }

    pub fn unit(&self) -> Option<[f64; 3]> {
        let n = self.norm();
        (n > 0.0).then(|| [self.hx / n, self.hy / n, self.hz / n])
    }
}

pub fn bloch_vector(k: Momentum, p: &QahParams) -> BlochVector {
    BlochVector {
        hx: p.xi_so * k.kx.sin(),
        hy: p.xi_so * k.ky.sin(),
        hz: p.mz - p.xi0 * k.kx.cos() - p.xi0 * k.ky.cos(),
    }
}

/// Rectangular momentum grid with `nx × ny` nodes, stored row-major (`ky` outer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumGrid {
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
}

impl MomentumGrid {
    /// Square window `[kmin, kmax]²` with `n` nodes per axis. Windows wider than one
    /// Brillouin zone are narrowed symmetrically to width 2π.
    pub fn square(kmin: f64, kmax: f64, n: usize) -> Result<Self, ModelError> {
        let axis = axis(kmin, kmax, n)?;
        Ok(Self {
            kx: axis.clone(),
            ky: axis,
        })
    }

    /// Square window of half-width `half` around `center`.
    pub fn centered(center: Momentum, half: f64, n: usize) -> Result<Self, ModelError> {
        Ok(Self {
            kx: axis(center.kx - half, center.kx + half, n)?,
            ky: axis(center.ky - half, center.ky + half, n)?,
        })
    }

    pub fn nx(&self) -> usize {
        self.kx.len()
    }

    pub fn ny(&self) -> usize {
        self.ky.len()
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx() + ix
    }

    pub fn momentum(&self, ix: usize, iy: usize) -> Momentum {
        Momentum::new(self.kx[ix], self.ky[iy])
    }

    /// Momentum of flat index `i`.
    pub fn at(&self, i: usize) -> Momentum {
        self.momentum(i % self.nx(), i / self.nx())
    }

    pub fn spacing(&self) -> f64 {
        let dx = if self.nx() > 1 { self.kx[1] - self.kx[0] } else { 0.0 };
        let dy = if self.ny() > 1 { self.ky[1] - self.ky[0] } else { 0.0 };
        dx.max(dy)
    }

    pub fn contains(&self, k: Momentum) -> bool {
        let (x0, x1) = (self.kx[0], self.kx[self.nx() - 1]);
        let (y0, y1) = (self.ky[0], self.ky[self.ny() - 1]);
        k.kx >= x0 && k.kx <= x1 && k.ky >= y0 && k.ky <= y1
    }
}

fn axis(kmin: f64, kmax: f64, n: usize) -> Result<Vec<f64>, ModelError> {
    if n < 2 {
        return Err(ModelError::GridTooSmall(n));
    }
    if !(kmin.is_finite() && kmax.is_finite() && kmax > kmin) {
        return Err(ModelError::InvalidParameter(format!(
            "momentum window [{kmin}, {kmax}] is empty or non-finite"
        )));
    }
    let (mut lo, mut hi) = (kmin, kmax);
    if hi - lo > 2.0 * PI {
        let mid = 0.5 * (lo + hi);
        lo = mid - PI;
        hi = mid + PI;
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| lo + step * i as f64).collect())
}

/// Momenta inside `grid` where the in-plane field vanishes (`hx = hy = 0`).
pub fn charge_momenta(grid: &MomentumGrid) -> Vec<Momentum> {
    let mut out = Vec::new();
    let candidates = |lo: f64, hi: f64| -> Vec<f64> {
        let first = (lo / PI - 1e-9).ceil() as i64;
        let last = (hi / PI + 1e-9).floor() as i64;
        (first..=last).map(|m| m as f64 * PI).collect()
    };
    let xs = candidates(grid.kx[0], grid.kx[grid.nx() - 1]);
    let ys = candidates(grid.ky[0], grid.ky[grid.ny() - 1]);
    for &ky in &ys {
        for &kx in &xs {
            out.push(Momentum::new(kx, ky));
        }
    }
    out
}

/// Chern number of the lower band from the lattice field strength on an
/// `n × n` discretization of the Brillouin zone.
pub fn chern_number(p: &QahParams, n: usize) -> Result<i32, ModelError> {
    p.validate()?;
    if n < 4 {
        return Err(ModelError::GridTooSmall(n));
    }
    let tol = 1e-10 * (p.xi0 + p.xi_so + p.mz.abs());
    let ks: Vec<f64> = (0..n).map(|j| -PI + 2.0 * PI * j as f64 / n as f64).collect();
    let mut min_norm = f64::INFINITY;
    let mut states = Vec::with_capacity(n * n);
    for &ky in &ks {
        for &kx in &ks {
            let h = bloch_vector(Momentum::new(kx, ky), p);
            min_norm = min_norm.min(h.norm());
            states.push(lower_band_state(&h));
        }
    }
    if min_norm < tol {
        return Err(ModelError::GapClosed { min_norm });
    }
    let link = |a: usize, b: usize| -> Complex64 {
        let (ua, ub) = (&states[a], &states[b]);
        let z = ua[0].conj() * ub[0] + ua[1].conj() * ub[1];
        z / z.norm()
    };
    let idx = |ix: usize, iy: usize| (iy % n) * n + (ix % n);
    let mut total = 0.0;
    for iy in 0..n {
        for ix in 0..n {
            let (a, b, c, d) = (idx(ix, iy), idx(ix + 1, iy), idx(ix + 1, iy + 1), idx(ix, iy + 1));
            let f = link(a, b) * link(b, c) * link(c, d) * link(d, a);
            total += f.arg();
        }
    }
    Ok((total / (2.0 * PI)).round() as i32)
}

fn lower_band_state(h: &BlochVector) -> [Complex64; 2] {
    let e = h.norm();
    let a = [Complex64::new(h.hx, -h.hy), Complex64::new(-e - h.hz, 0.0)];
    let b = [Complex64::new(e - h.hz, 0.0), Complex64::new(-h.hx, -h.hy)];
    let na = (a[0].norm_sqr() + a[1].norm_sqr()).sqrt();
    let nb = (b[0].norm_sqr() + b[1].norm_sqr()).sqrt();
    if na >= nb {
        [a[0] / na, a[1] / na]
    } else {
        [b[0] / nb, b[1] / nb]
    }
}

/// Band-inversion surface `hz(k) = 0` of the post-quench Hamiltonian.
///
/// The window is one Brillouin zone centred on `(0,0)` for `mz ≥ 0` and on `(π,π)`
/// otherwise, so the ring is closed whenever `0 < |mz| < 2ξ0`. At `|mz| = 2ξ0` the
/// surface shrinks to a single momentum, returned as a one-point contour.
pub fn ideal_bis(p: &QahParams, n: usize) -> Result<Vec<Contour>, ModelError> {
    p.validate()?;
    if n < 4 {
        return Err(ModelError::GridTooSmall(n));
    }
    let center = if p.mz >= 0.0 {
        Momentum::new(0.0, 0.0)
    } else {
        Momentum::new(PI, PI)
    };
    let scale = p.xi0 + p.xi_so + p.mz.abs();
    if (p.mz.abs() - 2.0 * p.xi0).abs() <= 1e-12 * scale {
        return Ok(vec![Contour {
            points: vec![[center.kx, center.ky]],
            closed: true,
            ends: None,
        }]);
    }
    let grid = MomentumGrid::centered(center, PI, n)?;
    let values: Vec<f64> = (0..grid.len()).map(|i| bloch_vector(grid.at(i), p).hz).collect();
    Ok(contour::zero_contours(&grid.kx, &grid.ky, &values, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(mz: f64) -> QahParams {
        QahParams::new(1.0, 0.2, mz).unwrap()
    }

    #[test]
    fn bloch_vector_at_gamma_and_generic_point() {
        let h = bloch_vector(Momentum::new(0.0, 0.0), &p(1.2));
        assert_eq!(h.as_array(), [0.0, 0.0, -0.8]);
        let h = bloch_vector(Momentum::new(PI / 2.0, PI / 2.0), &p(1.2));
        assert_abs_diff_eq!(h.hx, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(h.hy, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(h.hz, 1.2, epsilon = 1e-15);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(QahParams::new(0.0, 0.2, 1.0).is_err());
        assert!(QahParams::new(1.0, -0.1, 1.0).is_err());
        assert!(QahParams::new(1.0, 0.1, f64::NAN).is_err());
        assert!(NoiseStrengths::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn chern_numbers_by_phase() {
        assert_eq!(chern_number(&p(1.2), 40).unwrap().abs(), 1);
        assert_eq!(chern_number(&p(-1.2), 40).unwrap().abs(), 1);
        assert_eq!(chern_number(&p(5.0), 40).unwrap(), 0);
        assert_eq!(chern_number(&p(-2.5), 40).unwrap(), 0);
    }

    #[test]
    fn chern_gap_closing_reported() {
        // mz = 0 closes the gap at (0, π), which an even grid samples exactly.
        assert!(matches!(chern_number(&p(0.0), 40), Err(ModelError::GapClosed { .. })));
    }

    #[test]
    fn ideal_bis_is_a_single_closed_ring() {
        let curves = ideal_bis(&p(1.2), 121).unwrap();
        assert_eq!(curves.len(), 1);
        assert!(curves[0].closed);
        for q in &curves[0].points {
            let h = bloch_vector(Momentum::new(q[0], q[1]), &p(1.2));
            assert!(h.hz.abs() < 2e-3);
        }
        let curves = ideal_bis(&p(-1.2), 121).unwrap();
        assert_eq!(curves.len(), 1);
        assert!(curves[0].closed);
    }

    #[test]
    fn ideal_bis_degenerates_at_band_edge() {
        let curves = ideal_bis(&p(2.0), 41).unwrap();
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].points, vec![[0.0, 0.0]]);
    }

    #[test]
    fn grid_clamps_to_one_zone() {
        let g = MomentumGrid::square(-10.0, 10.0, 5).unwrap();
        assert_abs_diff_eq!(g.kx[0], -PI, epsilon = 1e-14);
        assert_abs_diff_eq!(g.kx[4], PI, epsilon = 1e-14);
    }

    #[test]
    fn charges_in_window() {
        let g = MomentumGrid::square(-2.0, 2.0, 5).unwrap();
        assert_eq!(charge_momenta(&g), vec![Momentum::new(0.0, 0.0)]);
        let g = MomentumGrid::square(-PI, PI, 5).unwrap();
        assert_eq!(charge_momenta(&g).len(), 9);
    }

    #[test]
    fn wrapping() {
        let k = Momentum::new(3.0 * PI / 2.0, -3.0 * PI / 2.0).wrapped();
        assert_abs_diff_eq!(k.kx, -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k.ky, PI / 2.0, epsilon = 1e-12);
    }
}
