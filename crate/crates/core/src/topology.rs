//! Dynamical topology of the time-averaged texture: deformed band-inversion
//! surfaces (dBIS), the dynamical field and its winding, Liouvillian
//! polarization windings around exceptional points, transition classification
//! and the sweet-spot criterion.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contour::{self, ContourEnd};
use crate::fitting::rescaled_average;
use crate::liouville::{self, EpCluster, EpSearch, LiouvilleError};
use crate::model::{bloch_vector, charge_momenta, Momentum, MomentumGrid, NoiseStrengths, QahParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("a dBIS contour reaches the edge of the momentum window")]
    OpenContour,
    #[error("no dBIS in the momentum window")]
    NoDbis,
    #[error("dynamical field undefined at {masked} of {total} dBIS points")]
    DegenerateField { masked: usize, total: usize },
    #[error("winding undefined: field masked at {0} points")]
    Masked(usize),
    #[error("winding requires a closed curve")]
    OpenCurve,
    #[error("s+ has zero norm")]
    ZeroVector,
    #[error("Liouvillian polarization vanishes on the loop at {0:?}")]
    SingularOnLoop(Momentum),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Liouville(#[from] LiouvilleError),
}

/// Time-averaged rescaled polarization on a momentum grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureGrid {
    pub grid: MomentumGrid,
    pub s_bar: Vec<[f64; 3]>,
    pub omega: Vec<f64>,
    /// False where the dynamics does not oscillate (overdamped, slower than the
    /// evolution window resolves, or defective) or the fit failed.
    pub defined: Vec<bool>,
    /// Post-quench Bloch vector per node.
    pub bloch: Vec<[f64; 3]>,
}

impl TextureGrid {
    /// Signed projection `s̄·h`, whose zero set is the dBIS.
    pub fn locator(&self) -> Vec<f64> {
        self.s_bar
            .iter()
            .zip(&self.bloch)
            .map(|(s, h)| s[0] * h[0] + s[1] * h[1] + s[2] * h[2])
            .collect()
    }

    /// Bilinear interpolation of `value` at `q`; `None` outside the grid or if
    /// a corner of the enclosing cell is undefined.
    pub fn interpolate(&self, values: &[f64], q: [f64; 2]) -> Option<f64> {
        let g = &self.grid;
        let locate = |axis: &[f64], x: f64| -> Option<(usize, f64)> {
            let (lo, hi) = (axis[0], axis[axis.len() - 1]);
            if !(x >= lo && x <= hi) {
                return None;
            }
            let d = (hi - lo) / (axis.len() - 1) as f64;
            let i = (((x - lo) / d).floor() as usize).min(axis.len() - 2);
            Some((i, (x - axis[i]) / d))
        };
        let (ix, fx) = locate(&g.kx, q[0])?;
        let (iy, fy) = locate(&g.ky, q[1])?;
        let idx = [
            g.index(ix, iy),
            g.index(ix + 1, iy),
            g.index(ix, iy + 1),
            g.index(ix + 1, iy + 1),
        ];
        if idx.iter().any(|&i| !self.defined[i]) {
            return None;
        }
        let v = idx.map(|i| values[i]);
        Some(v[0] * (1.0 - fx) * (1.0 - fy) + v[1] * fx * (1.0 - fy) + v[2] * (1.0 - fx) * fy + v[3] * fx * fy)
    }
}

/// Lowest frequency still counted as oscillating over an evolution window of
/// length `t_total`: half a period must fit inside it.
pub fn resolvable_omega(t_total: f64) -> f64 {
    PI / t_total
}

/// Nodes adjacent to the dBIS: for every grid edge between defined nodes where
/// `s̄·h` changes sign, the endpoint with the smaller `|s̄·h|`.
pub fn dbis_lattice_nodes(texture: &TextureGrid) -> Vec<usize> {
    let g = &texture.grid;
    let f = texture.locator();
    let mut nodes = Vec::new();
    for iy in 0..g.ny() {
        for ix in 0..g.nx() {
            let a = g.index(ix, iy);
            for (jx, jy) in [(ix + 1, iy), (ix, iy + 1)] {
                if jx >= g.nx() || jy >= g.ny() {
                    continue;
                }
                let b = g.index(jx, jy);
                if texture.defined[a] && texture.defined[b] && f[a] * f[b] < 0.0 {
                    let near = if f[a].abs() <= f[b].abs() { a } else { b };
                    if !nodes.contains(&near) {
                        nodes.push(near);
                    }
                }
            }
        }
    }
    nodes.sort_unstable();
    nodes
}

/// Smallest oscillation frequency over [`dbis_lattice_nodes`].
pub fn lattice_min_omega(texture: &TextureGrid) -> Option<(f64, Momentum)> {
    dbis_lattice_nodes(texture)
        .into_iter()
        .map(|i| (texture.omega[i], texture.grid.at(i)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Smallest interpolated oscillation frequency along the extracted curves.
pub fn curve_min_omega(texture: &TextureGrid, dbis: &DbisExtraction) -> Option<f64> {
    dbis.curves
        .iter()
        .flat_map(|c| c.points.iter())
        .filter_map(|&q| texture.interpolate(&texture.omega, q))
        .reduce(f64::min)
}

/// Texture from the exact Liouvillian decomposition, averaged over `times`.
pub fn oracle_texture(p: &QahParams, w: &NoiseStrengths, grid: &MomentumGrid, times: &[f64]) -> TextureGrid {
    let t_total = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    let omega_min = resolvable_omega(t_total);
    let cells: Vec<([f64; 3], f64, bool, [f64; 3])> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let k = grid.at(i);
            let h = bloch_vector(k, p).as_array();
            match liouville::quench_decomposition(k, p, w) {
                Ok(d) => {
                    let om = d.omega();
                    let ok = !d.is_overdamped() && om >= omega_min;
                    (rescaled_average(&d, times), om, ok, h)
                }
                Err(_) => ([0.0; 3], liouville::oscillation_frequency(k, p, w), false, h),
            }
        })
        .collect();
    TextureGrid {
        grid: grid.clone(),
        s_bar: cells.iter().map(|c| c.0).collect(),
        omega: cells.iter().map(|c| c.1).collect(),
        defined: cells.iter().map(|c| c.2).collect(),
        bloch: cells.iter().map(|c| c.3).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbisCurve {
    /// Closed curves repeat the first point at the end and run counter-clockwise.
    pub points: Vec<[f64; 2]>,
    /// Unit normal per point, pointing to the side where `s̄·h < 0`.
    pub normals: Vec<[f64; 2]>,
    pub closed: bool,
    /// Largest interpolated `|s̄|` along the curve.
    pub max_sbar_norm: f64,
}

impl DbisCurve {
    pub fn distance_to(&self, q: [f64; 2]) -> f64 {
        contour::Contour {
            points: self.points.clone(),
            closed: self.closed,
            ends: None,
        }
        .distance_to(q)
    }

    /// Points without the repeated closing point.
    pub fn distinct_points(&self) -> &[[f64; 2]] {
        if self.closed && self.points.len() > 1 {
            &self.points[..self.points.len() - 1]
        } else {
            &self.points
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbisExtraction {
    pub curves: Vec<DbisCurve>,
    /// Ends of dBIS fragments cut off by non-oscillating cells.
    pub interruptions: Vec<Momentum>,
    /// Whether every curve point satisfies `|s̄| < threshold`.
    pub within_threshold: bool,
}

impl DbisExtraction {
    pub fn is_closed(&self) -> bool {
        !self.curves.is_empty() && self.curves.iter().all(|c| c.closed) && self.interruptions.is_empty()
    }

    pub fn distance_to(&self, q: Momentum) -> f64 {
        self.curves
            .iter()
            .map(|c| c.distance_to([q.kx, q.ky]))
            .fold(f64::INFINITY, f64::min)
    }

    /// The longest curve, which carries the winding in practice.
    pub fn main_curve(&self) -> Option<&DbisCurve> {
        self.curves
            .iter()
            .max_by(|a, b| curve_length(a).total_cmp(&curve_length(b)))
    }
}

fn curve_length(c: &DbisCurve) -> f64 {
    c.points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

/// Zero contours of the locator `s̄·h`, split at undefined cells.
pub fn extract_dbis(texture: &TextureGrid, threshold: f64) -> Result<DbisExtraction, TopologyError> {
    let g = &texture.grid;
    if g.nx() < 8 || g.ny() < 8 {
        return Err(TopologyError::InvalidInput(format!(
            "texture grid {}x{} is smaller than 8x8",
            g.nx(),
            g.ny()
        )));
    }
    let f = texture.locator();
    let contours = contour::zero_contours(&g.kx, &g.ky, &f, Some(&texture.defined));
    if contours.is_empty() {
        return Err(TopologyError::NoDbis);
    }
    let mut curves = Vec::new();
    let mut interruptions = Vec::new();
    let norm_field: Vec<f64> = texture
        .s_bar
        .iter()
        .map(|s| (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt())
        .collect();
    let mut within = true;
    for c in contours {
        if let Some((a, b)) = c.ends {
            if a == ContourEnd::Boundary || b == ContourEnd::Boundary {
                return Err(TopologyError::OpenContour);
            }
            let (p0, p1) = (c.points[0], c.points[c.points.len() - 1]);
            interruptions.push(Momentum::new(p0[0], p0[1]));
            interruptions.push(Momentum::new(p1[0], p1[1]));
        }
        let mut points = c.points;
        if !c.closed && points.len() >= 2 && !positive_on_left(texture, &f, &points) {
            points.reverse();
        }
        let normals = outward_normals(&points, c.closed);
        let max_sbar_norm = points
            .iter()
            .filter_map(|&q| texture.interpolate(&norm_field, q))
            .fold(0.0, f64::max);
        within &= max_sbar_norm < threshold;
        curves.push(DbisCurve {
            points,
            normals,
            closed: c.closed,
            max_sbar_norm,
        });
    }
    Ok(DbisExtraction {
        curves,
        interruptions,
        within_threshold: within,
    })
}

fn positive_on_left(texture: &TextureGrid, f: &[f64], pts: &[[f64; 2]]) -> bool {
    let mut score = 0.0;
    let eps = 0.25 * texture.grid.spacing();
    for w in pts.windows(2) {
        let (tx, ty) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
        let n = tx.hypot(ty);
        if n == 0.0 {
            continue;
        }
        let mid = [0.5 * (w[0][0] + w[1][0]), 0.5 * (w[0][1] + w[1][1])];
        let q = [mid[0] - eps * ty / n, mid[1] + eps * tx / n];
        if let Some(v) = texture.interpolate(f, q) {
            score += v.signum();
        }
    }
    score >= 0.0
}

/// Unit normals from central-difference tangents, rotated clockwise so that
/// they point outward of a counter-clockwise curve.
fn outward_normals(points: &[[f64; 2]], closed: bool) -> Vec<[f64; 2]> {
    let n = points.len();
    if n < 2 {
        return vec![[0.0, 0.0]; n];
    }
    let distinct = if closed { n - 1 } else { n };
    let mut out = Vec::with_capacity(n);
    for i in 0..distinct {
        let (prev, next) = if closed {
            (points[(i + distinct - 1) % distinct], points[(i + 1) % distinct])
        } else {
            (points[i.saturating_sub(1)], points[(i + 1).min(n - 1)])
        };
        let (tx, ty) = (next[0] - prev[0], next[1] - prev[1]);
        let len = tx.hypot(ty);
        out.push(if len > 0.0 { [ty / len, -tx / len] } else { [0.0, 0.0] });
    }
    if closed {
        out.push(out[0]);
    }
    out
}

/// Unit field `g` per curve point; `None` where it is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicalField {
    pub g: Vec<Option<[f64; 2]>>,
    pub closed: bool,
}

impl DynamicalField {
    pub fn masked_count(&self) -> usize {
        self.g.iter().filter(|g| g.is_none()).count()
    }
}

/// Normal derivative of `(s̄x, s̄y)` at every distinct curve point, by central
/// differences of the bilinear interpolant with step half a grid spacing.
pub fn dynamical_field(texture: &TextureGrid, curve: &DbisCurve) -> Result<DynamicalField, TopologyError> {
    let sx: Vec<f64> = texture.s_bar.iter().map(|s| s[0]).collect();
    let sy: Vec<f64> = texture.s_bar.iter().map(|s| s[1]).collect();
    let delta = 0.5 * texture.grid.spacing();
    let pts = curve.distinct_points();
    let g: Vec<Option<[f64; 2]>> = pts
        .iter()
        .zip(&curve.normals)
        .map(|(q, n)| {
            let plus = [q[0] + delta * n[0], q[1] + delta * n[1]];
            let minus = [q[0] - delta * n[0], q[1] - delta * n[1]];
            let gx = (texture.interpolate(&sx, plus)? - texture.interpolate(&sx, minus)?) / (2.0 * delta);
            let gy = (texture.interpolate(&sy, plus)? - texture.interpolate(&sy, minus)?) / (2.0 * delta);
            let norm = gx.hypot(gy);
            (norm > 1e-9).then(|| [gx / norm, gy / norm])
        })
        .collect();
    let masked = g.iter().filter(|x| x.is_none()).count();
    if pts.is_empty() || masked * 5 > pts.len() {
        return Err(TopologyError::DegenerateField {
            masked,
            total: pts.len(),
        });
    }
    Ok(DynamicalField {
        g,
        closed: curve.closed,
    })
}

/// Integer winding with the distance of the raw value from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Winding {
    pub value: i32,
    pub raw: f64,
    pub residual: f64,
}

impl Winding {
    fn from_angle(total: f64, what: &str) -> Self {
        let raw = total / (2.0 * PI);
        let value = raw.round();
        let residual = (raw - value).abs();
        if residual >= 0.05 {
            log::warn!("{what} winding {raw:.4} is {residual:.3} away from an integer");
        }
        Self {
            value: value as i32,
            raw,
            residual,
        }
    }
}

fn wrapped_delta(a: f64, b: f64) -> f64 {
    let mut d = b - a;
    while d > PI {
        d -= 2.0 * PI;
    }
    while d < -PI {
        d += 2.0 * PI;
    }
    d
}

fn accumulate_angle(angles: &[f64]) -> f64 {
    let n = angles.len();
    (0..n).map(|i| wrapped_delta(angles[i], angles[(i + 1) % n])).sum()
}

/// Winding of `g` along a closed dBIS.
pub fn winding_w(field: &DynamicalField) -> Result<Winding, TopologyError> {
    if !field.closed {
        return Err(TopologyError::OpenCurve);
    }
    let masked = field.masked_count();
    if masked > 0 {
        return Err(TopologyError::Masked(masked));
    }
    let angles: Vec<f64> = field
        .g
        .iter()
        .map(|g| {
            let g = g.expect("checked above");
            g[1].atan2(g[0])
        })
        .collect();
    Ok(Winding::from_angle(accumulate_angle(&angles), "dynamical field"))
}

/// `⟨L_α⟩ = s†L_α s` for the normalized `s+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LPolarization {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
}

fn spin_one_operators() -> [Matrix3<Complex64>; 3] {
    let (z, i) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 1.0));
    #[rustfmt::skip]
    let lx = Matrix3::new(
        z, z, z,
        z, z, -i,
        z, i, z,
    );
    #[rustfmt::skip]
    let ly = Matrix3::new(
        z, z, i,
        z, z, z,
        -i, z, z,
    );
    let lz = (ly * lx - lx * ly) * i;
    [lx, ly, lz]
}

pub fn liouvillian_polarization(s_plus: &[Complex64; 3]) -> Result<LPolarization, TopologyError> {
    let v = Vector3::from(*s_plus);
    let n = v.norm();
    if n < 1e-12 {
        return Err(TopologyError::ZeroVector);
    }
    let v = v / Complex64::new(n, 0.0);
    let ops = spin_one_operators();
    let expect = |m: &Matrix3<Complex64>| {
        let z = v.dotc(&(m * v));
        debug_assert!(z.im.abs() < 1e-9, "expectation of a Hermitian operator is real");
        z.re
    };
    Ok(LPolarization {
        lx: expect(&ops[0]),
        ly: expect(&ops[1]),
        lz: expect(&ops[2]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopS {
    pub center: Momentum,
    pub radius: f64,
    pub n_samples: usize,
}

impl LoopS {
    pub fn new(center: Momentum, radius: f64, n_samples: usize) -> Result<Self, TopologyError> {
        if !(radius.is_finite() && radius > 0.0) || n_samples < 16 {
            return Err(TopologyError::InvalidInput(format!(
                "loop needs radius > 0 and at least 16 samples (got r = {radius}, n = {n_samples})"
            )));
        }
        Ok(Self {
            center,
            radius,
            n_samples,
        })
    }

    /// Default loop: r = 0.3, 128 samples.
    pub fn around(center: Momentum) -> Self {
        Self {
            center,
            radius: 0.3,
            n_samples: 128,
        }
    }

    pub fn points(&self) -> Vec<Momentum> {
        (0..self.n_samples)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / self.n_samples as f64;
                Momentum::new(
                    self.center.kx + self.radius * th.cos(),
                    self.center.ky + self.radius * th.sin(),
                )
            })
            .collect()
    }
}

/// Winding of `(⟨Lx⟩, ⟨Ly⟩)` around the loop.
pub fn winding_ne(p: &QahParams, w: &NoiseStrengths, lp: &LoopS) -> Result<Winding, TopologyError> {
    let mut angles = Vec::with_capacity(lp.n_samples);
    for k in lp.points() {
        let d = liouville::quench_decomposition(k, p, w)?;
        let sp = d.s_plus().ok_or(TopologyError::SingularOnLoop(k))?;
        let l = liouvillian_polarization(&sp)?;
        if l.lx.hypot(l.ly) < 1e-6 {
            return Err(TopologyError::SingularOnLoop(k));
        }
        angles.push(l.ly.atan2(l.lx));
    }
    Ok(Winding::from_angle(
        accumulate_angle(&angles),
        "Liouvillian polarization",
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionPhase {
    Stable,
    #[serde(rename = "type_i")]
    TypeI,
    #[serde(rename = "type_ii")]
    TypeII,
    /// No dBIS in the window (no band inversion).
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub kmin: f64,
    pub kmax: f64,
    pub texture_n: usize,
    pub ep_grid_n: usize,
    /// Sample times of the time average.
    pub times: Vec<f64>,
    pub dbis_threshold: f64,
}

impl ClassifyOptions {
    /// Window [-2, 2], 30 ms with 16 samples.
    pub fn standard() -> Self {
        Self {
            kmin: -2.0,
            kmax: 2.0,
            texture_n: 61,
            ep_grid_n: 64,
            times: (0..16).map(|i| 2.0 * i as f64).collect(),
            dbis_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEvidence {
    pub cluster: EpCluster,
    /// Closest approach to a dBIS curve or interruption; `None` without a dBIS.
    pub distance_to_dbis: Option<f64>,
    pub touches_dbis: bool,
    /// Charge momentum inside the cluster, if any.
    pub charge: Option<Momentum>,
    pub n_e: Option<i32>,
    pub loop_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvidence {
    pub phase: TransitionPhase,
    pub dbis: Option<DbisExtraction>,
    pub dbis_error: Option<String>,
    /// Winding W per closed curve (None where the field is masked).
    pub windings: Vec<Option<i32>>,
    pub clusters: Vec<ClusterEvidence>,
}

/// Classifies the quench dynamics at `(p, w)` from the oracle texture.
pub fn classify_transition(p: &QahParams, w: &NoiseStrengths, opts: &ClassifyOptions) -> TransitionEvidence {
    let grid = match MomentumGrid::square(opts.kmin, opts.kmax, opts.texture_n) {
        Ok(g) => g,
        Err(e) => {
            return TransitionEvidence {
                phase: TransitionPhase::Trivial,
                dbis: None,
                dbis_error: Some(e.to_string()),
                windings: Vec::new(),
                clusters: Vec::new(),
            }
        }
    };
    let texture = oracle_texture(p, w, &grid, &opts.times);
    classify_texture(p, w, &texture, opts)
}

/// Classification for an existing texture (oracle or measured).
pub fn classify_texture(
    p: &QahParams,
    w: &NoiseStrengths,
    texture: &TextureGrid,
    opts: &ClassifyOptions,
) -> TransitionEvidence {
    let dbis = extract_dbis(texture, opts.dbis_threshold);
    let (dbis, dbis_error) = match dbis {
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
                    dynamical_field(texture, c)
                        .and_then(|f| winding_w(&f))
                        .ok()
                        .map(|w| w.value)
                })
                .collect()
        })
        .unwrap_or_default();

    let search = EpSearch::new(opts.kmin, opts.kmax, opts.ep_grid_n, p);
    let clusters = liouville::find_exceptional_points(p, w, &search).unwrap_or_default();
    let charges = charge_momenta(&texture.grid);
    let cell = texture.grid.spacing() * std::f64::consts::SQRT_2;
    let mut evidence = Vec::new();
    for cl in clusters {
        let distance = match &dbis {
            Some(d) => {
                let to_curves = cl
                    .points
                    .iter()
                    .map(|e| d.distance_to(e.momentum))
                    .fold(f64::INFINITY, f64::min);
                let to_breaks = d
                    .interruptions
                    .iter()
                    .flat_map(|b| cl.points.iter().map(move |e| e.momentum.distance(b)))
                    .fold(f64::INFINITY, f64::min);
                Some(to_curves.min((to_breaks - 2.0 * cell).max(0.0)))
            }
            None => None,
        };
        let touches = distance.is_some_and(|d| d <= 1.5 * cell);
        let charge = charges
            .iter()
            .copied()
            .find(|q| cl.points.iter().any(|e| e.momentum.distance(q) <= 1e-6));
        let (n_e, loop_radius) = if touches {
            match cluster_winding(p, w, &cl, &charges, charge, texture.grid.spacing()) {
                Some((n, r)) => (Some(n), Some(r)),
                None => (None, None),
            }
        } else {
            (None, None)
        };
        evidence.push(ClusterEvidence {
            cluster: cl,
            distance_to_dbis: distance,
            touches_dbis: touches,
            charge,
            n_e,
            loop_radius,
        });
    }

    let phase = if dbis.is_none() && dbis_error.as_deref() == Some(&TopologyError::NoDbis.to_string()) {
        TransitionPhase::Trivial
    } else if evidence
        .iter()
        .any(|c| c.touches_dbis && c.charge.is_some() && c.n_e.is_some_and(|n| n != 0))
    {
        TransitionPhase::TypeII
    } else if evidence.iter().any(|c| c.touches_dbis) {
        TransitionPhase::TypeI
    } else {
        TransitionPhase::Stable
    };
    TransitionEvidence {
        phase,
        dbis,
        dbis_error,
        windings,
        clusters: evidence,
    }
}

/// N_E on a loop around the cluster that avoids other singular points. The
/// radius starts just outside the cluster and grows by 1.5 while the loop
/// crosses a singularity, without ever enclosing a charge other than the one
/// the cluster sits on.
fn cluster_winding(
    p: &QahParams,
    w: &NoiseStrengths,
    cl: &EpCluster,
    charges: &[Momentum],
    own_charge: Option<Momentum>,
    spacing: f64,
) -> Option<(i32, f64)> {
    let center = match own_charge {
        Some(q) => q,
        None => cl.centroid,
    };
    let reach = cl
        .points
        .iter()
        .map(|e| e.momentum.distance(&center))
        .fold(0.0, f64::max);
    let limit = charges
        .iter()
        .filter(|q| Some(**q) != own_charge)
        .map(|q| q.distance(&center))
        .fold(f64::INFINITY, f64::min);
    let mut r = (reach + 2.0 * spacing).max(0.1);
    while r < limit {
        let lp = LoopS {
            center,
            radius: r,
            n_samples: 256,
        };
        match winding_ne(p, w, &lp) {
            Ok(wn) if wn.residual < 0.05 => return Some((wn.value, r)),
            _ => r *= 1.5,
        }
    }
    None
}

/// Sweet-spot inequality evaluated literally:
/// `(wy−wx)ξ0²/ξso² − 2ξso < wz − wx < (wy−wx)ξ0²/ξso² + 2ξso`.
pub fn sweet_spot_literal(p: &QahParams, w: &NoiseStrengths) -> bool {
    if p.xi_so == 0.0 {
        return false;
    }
    let center = (w.wy - w.wx) * p.xi0 * p.xi0 / (p.xi_so * p.xi_so);
    let x = w.wz - w.wx;
    center - 2.0 * p.xi_so.abs() < x && x < center + 2.0 * p.xi_so.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweetSpotPoint {
    pub magnitude: f64,
    pub noise: NoiseStrengths,
    pub dbis_stable: bool,
    pub ep_on_dbis: bool,
    pub phase: TransitionPhase,
}

/// Classifies `direction·m` for every magnitude `m`.
pub fn sweet_spot_scan(
    p: &QahParams,
    direction: &NoiseStrengths,
    magnitudes: &[f64],
    opts: &ClassifyOptions,
) -> Result<Vec<SweetSpotPoint>, TopologyError> {
    if magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(TopologyError::InvalidInput("magnitudes must be non-negative".into()));
    }
    Ok(magnitudes
        .iter()
        .map(|&m| {
            let w = direction.scaled(m);
            let ev = classify_transition(p, &w, opts);
            SweetSpotPoint {
                magnitude: m,
                noise: w,
                dbis_stable: ev.dbis.as_ref().is_some_and(|d| d.is_closed()),
                ep_on_dbis: ev.clusters.iter().any(|c| c.touches_dbis),
                phase: ev.phase,
            }
        })
        .collect())
}
