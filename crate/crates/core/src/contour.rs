//! Zero-level contours of a scalar field sampled on a rectilinear grid
//! (marching squares with linear interpolation along cell edges).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Why an open contour stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContourEnd {
    /// Reaches the outer frame of the grid.
    Boundary,
    /// Runs into a cell excluded by the mask.
    Masked,
}

/// A polyline in momentum space. Closed contours repeat their first point at the
/// end and are oriented counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
    /// Termination at (start, end) for open contours.
    pub ends: Option<(ContourEnd, ContourEnd)>,
}

impl Contour {
    pub fn length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }

    /// Signed shoelace area (positive for counter-clockwise).
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    /// Distance from `q` to the nearest segment.
    pub fn distance_to(&self, q: [f64; 2]) -> f64 {
        if self.points.len() == 1 {
            let p = self.points[0];
            return (q[0] - p[0]).hypot(q[1] - p[1]);
        }
        self.points
            .windows(2)
            .map(|w| segment_distance(q, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn signed_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

/// A node with value exactly zero is the crossing point of both adjacent edges.
fn dedup(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.dedup();
    pts
}

fn segment_distance(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (q[0] - a[0] - t * dx).hypot(q[1] - a[1] - t * dy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    /// Between nodes (ix, iy) and (ix + 1, iy).
    H(usize, usize),
    /// Between nodes (ix, iy) and (ix, iy + 1).
    V(usize, usize),
}

/// Zero contours of `values` (row-major, `ys` outer). Cells with any masked corner
/// (`mask[i] == false`) are skipped; contours ending there are reported as
/// [`ContourEnd::Masked`].
pub fn zero_contours(xs: &[f64], ys: &[f64], values: &[f64], mask: Option<&[bool]>) -> Vec<Contour> {
    let (nx, ny) = (xs.len(), ys.len());
    assert_eq!(values.len(), nx * ny, "value array does not match grid");
    if nx < 2 || ny < 2 {
        return Vec::new();
    }
    let v = |ix: usize, iy: usize| values[iy * nx + ix];
    let ok = |ix: usize, iy: usize| mask.is_none_or(|m| m[iy * nx + ix]) && v(ix, iy).is_finite();
    let inside = |ix: usize, iy: usize| v(ix, iy) > 0.0;

    let mut segments: Vec<[Edge; 2]> = Vec::new();
    for iy in 0..ny - 1 {
        for ix in 0..nx - 1 {
            if !(ok(ix, iy) && ok(ix + 1, iy) && ok(ix + 1, iy + 1) && ok(ix, iy + 1)) {
                continue;
            }
            let c = [
                inside(ix, iy),
                inside(ix + 1, iy),
                inside(ix + 1, iy + 1),
                inside(ix, iy + 1),
            ];
            let bottom = Edge::H(ix, iy);
            let right = Edge::V(ix + 1, iy);
            let top = Edge::H(ix, iy + 1);
            let left = Edge::V(ix, iy);
            let crossing = [c[0] != c[1], c[1] != c[2], c[2] != c[3], c[3] != c[0]];
            let edges = [bottom, right, top, left];
            let hits: Vec<Edge> = (0..4).filter(|&e| crossing[e]).map(|e| edges[e]).collect();
            match hits.len() {
                2 => segments.push([hits[0], hits[1]]),
                4 => {
                    let center = 0.25 * (v(ix, iy) + v(ix + 1, iy) + v(ix + 1, iy + 1) + v(ix, iy + 1));
                    if (center > 0.0) == c[0] {
                        // Diagonal through corners 0 and 2 is connected; cut off 1 and 3.
                        segments.push([bottom, right]);
                        segments.push([top, left]);
                    } else {
                        segments.push([left, bottom]);
                        segments.push([right, top]);
                    }
                }
                _ => {}
            }
        }
    }

    let point = |e: Edge| -> [f64; 2] {
        let (a, b, pa, pb) = match e {
            Edge::H(ix, iy) => (v(ix, iy), v(ix + 1, iy), [xs[ix], ys[iy]], [xs[ix + 1], ys[iy]]),
            Edge::V(ix, iy) => (v(ix, iy), v(ix, iy + 1), [xs[ix], ys[iy]], [xs[ix], ys[iy + 1]]),
        };
        let t = a / (a - b);
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };
    let on_frame = |e: Edge| match e {
        Edge::H(_, iy) => iy == 0 || iy == ny - 1,
        Edge::V(ix, _) => ix == 0 || ix == nx - 1,
    };

    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (i, s) in segments.iter().enumerate() {
        for e in s {
            by_edge.entry(*e).or_default().push(i);
        }
    }
    let mut used = vec![false; segments.len()];

    let trace = |start_seg: usize, start_edge: Edge, used: &mut Vec<bool>| -> Vec<Edge> {
        let mut chain = vec![start_edge];
        let mut seg = start_seg;
        let mut at = start_edge;
        loop {
            used[seg] = true;
            let s = segments[seg];
            let next = if s[0] == at { s[1] } else { s[0] };
            chain.push(next);
            at = next;
            match by_edge[&next].iter().find(|&&j| !used[j]) {
                Some(&j) => seg = j,
                None => break,
            }
        }
        chain
    };

    // Deterministic order: walk edges in segment order.
    let mut endpoints: Vec<Edge> = Vec::new();
    for s in &segments {
        for e in s {
            if by_edge[e].len() == 1 && !endpoints.contains(e) {
                endpoints.push(*e);
            }
        }
    }

    let mut out = Vec::new();
    for e in endpoints {
        let seg = by_edge[&e][0];
        if used[seg] {
            continue;
        }
        let chain = trace(seg, e, &mut used);
        let end_kind = |e: Edge| {
            if on_frame(e) {
                ContourEnd::Boundary
            } else {
                ContourEnd::Masked
            }
        };
        let last = *chain.last().unwrap();
        out.push(Contour {
            points: dedup(chain.iter().map(|&e| point(e)).collect()),
            closed: false,
            ends: Some((end_kind(e), end_kind(last))),
        });
    }
    for i in 0..segments.len() {
        if used[i] {
            continue;
        }
        let chain = trace(i, segments[i][0], &mut used);
        let mut pts: Vec<[f64; 2]> = chain.iter().map(|&e| point(e)).collect();
        // chain ends where it started
        pts.pop();
        let mut pts = dedup(pts);
        while pts.len() > 1 && pts[0] == pts[pts.len() - 1] {
            pts.pop();
        }
        if signed_area(&pts) < 0.0 {
            pts.reverse();
        }
        let first = pts[0];
        pts.push(first);
        out.push(Contour {
            points: pts,
            closed: true,
            ends: None,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn circle_is_closed_and_counter_clockwise() {
        let xs = linspace(-2.0, 2.0, 81);
        let vals: Vec<f64> = xs
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| 1.0 - x * x - y * y))
            .collect();
        let c = zero_contours(&xs, &xs, &vals, None);
        assert_eq!(c.len(), 1);
        assert!(c[0].closed);
        assert!(c[0].signed_area() > 0.0);
        assert!((c[0].signed_area() - std::f64::consts::PI).abs() < 0.01);
        assert!((c[0].length() - 2.0 * std::f64::consts::PI).abs() < 0.01);
        assert_eq!(c[0].points.first(), c[0].points.last());
    }

    #[test]
    fn straight_line_hits_boundary() {
        let xs = linspace(-1.0, 1.0, 11);
        let vals: Vec<f64> = xs.iter().flat_map(|&_y| xs.iter().map(move |&x| x - 0.05)).collect();
        let c = zero_contours(&xs, &xs, &vals, None);
        assert_eq!(c.len(), 1);
        assert!(!c[0].closed);
        assert_eq!(c[0].ends, Some((ContourEnd::Boundary, ContourEnd::Boundary)));
        for p in &c[0].points {
            assert!((p[0] - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_interrupts_ring() {
        let xs = linspace(-2.0, 2.0, 41);
        let n = xs.len();
        let vals: Vec<f64> = xs
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| 1.0 - x * x - y * y))
            .collect();
        let mask: Vec<bool> = (0..n * n)
            .map(|i| {
                let (x, y) = (xs[i % n], xs[i / n]);
                !((x - 1.0).abs() < 0.2 && y.abs() < 0.2)
            })
            .collect();
        let c = zero_contours(&xs, &xs, &vals, Some(&mask));
        assert_eq!(c.len(), 1);
        assert!(!c[0].closed);
        assert_eq!(c[0].ends, Some((ContourEnd::Masked, ContourEnd::Masked)));
    }

    #[test]
    fn two_rings() {
        let xs = linspace(-3.0, 3.0, 121);
        let vals: Vec<f64> = xs
            .iter()
            .flat_map(|&y| {
                xs.iter().map(move |&x| {
                    let a = 0.5 - (x - 1.5).powi(2) - y * y;
                    let b = 0.5 - (x + 1.5).powi(2) - y * y;
                    a.max(b)
                })
            })
            .collect();
        let c = zero_contours(&xs, &xs, &vals, None);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.closed));
    }
}
