//! Classical localization baselines: DOA picking from soundmaps,
//! pseudo-linear least-squares bearing intersection, and fuzzy grid
//! localization.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff_deg, Point2};
use crate::scene::Area;
use crate::soundmap::SoundmapFeature;

/// Maps flatter than this peak/mean ratio carry no usable bearing.
pub const MIN_DOA_CONFIDENCE: f64 = 1.05;
/// PLSE refuses systems worse conditioned than this.
pub const MAX_CONDITION: f64 = 1e8;
/// Bearings below this confidence are down-weighted in weighted PLSE.
pub const LOW_CONFIDENCE: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bearing {
    pub node: Point2,
    /// Degrees counter-clockwise from +x, [0, 360).
    pub bearing: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BearingSet {
    pub bearings: Vec<Bearing>,
}

impl BearingSet {
    pub fn new(bearings: Vec<Bearing>) -> Self {
        Self { bearings }
    }

    /// Exact bearings from every node towards `source`, confidence 1.
    pub fn exact(nodes: &[Point2], source: Point2) -> Self {
        Self::new(
            nodes
                .iter()
                .map(|&node| Bearing {
                    node,
                    bearing: node.bearing_to(source),
                    confidence: 1.0,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.bearings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bearings.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Plse,
    Fuzzy,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Plse => "plse",
            Method::Fuzzy => "fuzzy",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plse" => Ok(Method::Plse),
            "fuzzy" => Ok(Method::Fuzzy),
            _ => Err(Error::invalid(format!("unknown localization method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationEstimate {
    pub position: Point2,
    pub method: Method,
    /// PLSE: RMS distance to the bearing lines (m). Fuzzy: 1 − peak membership.
    pub residual: f64,
}

impl LocalizationEstimate {
    /// Clamps the position into `area` expanded by a 20 % margin on each side.
    pub fn clamped(mut self, area: Area) -> Self {
        let (mx, my) = (0.2 * area.width, 0.2 * area.height);
        self.position.x = self.position.x.clamp(-mx, area.width + mx);
        self.position.y = self.position.y.clamp(-my, area.height + my);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Doa {
    pub bearing: f64,
    /// Peak over mean of the min-shifted full-band map.
    pub confidence: f64,
}

/// Bearing of the strongest direction in the sub-band-summed map.
pub fn doa_from_soundmap(map: &SoundmapFeature) -> Result<Doa> {
    if map.num_angles() == 0 || map.num_subbands() == 0 {
        return Err(Error::invalid("empty soundmap"));
    }
    let full = map.full_band();
    let min = full.iter().copied().fold(f64::INFINITY, f64::min);
    let (peak_idx, peak) = full
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        });
    let mean = full.iter().map(|v| v - min).sum::<f64>() / full.len() as f64;
    let confidence = if mean > 0.0 { (peak - min) / mean } else { 1.0 };
    if !(confidence >= MIN_DOA_CONFIDENCE) {
        return Err(Error::AmbiguousDoa { confidence });
    }
    Ok(Doa {
        bearing: map.angles[peak_idx],
        confidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlseOptions {
    /// Scale rows of low-confidence bearings by `(confidence - 1) / 0.2`.
    pub weighted: bool,
}

/// Unweighted pseudo-linear least-squares intersection of bearing lines.
pub fn plse_triangulate(bearings: &BearingSet) -> Result<LocalizationEstimate> {
    plse_triangulate_with(bearings, PlseOptions::default())
}

/// Solves `sin θ_n·x − cos θ_n·y = sin θ_n·x_n − cos θ_n·y_n` in the least
/// squares sense (Householder QR on coordinates centred at the node centroid).
pub fn plse_triangulate_with(
    bearings: &BearingSet,
    opts: PlseOptions,
) -> Result<LocalizationEstimate> {
    let n = bearings.len();
    if n < 2 {
        return Err(Error::invalid(format!("PLSE needs at least 2 bearings, got {n}")));
    }
    let cx = bearings.bearings.iter().map(|b| b.node.x).sum::<f64>() / n as f64;
    let cy = bearings.bearings.iter().map(|b| b.node.y).sum::<f64>() / n as f64;

    let mut rows = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    for b in &bearings.bearings {
        let (s, c) = b.bearing.to_radians().sin_cos();
        let w = if opts.weighted && b.confidence < LOW_CONFIDENCE {
            ((b.confidence - 1.0) / (LOW_CONFIDENCE - 1.0)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        rows.push([w * s, -w * c]);
        rhs.push(w * (s * (b.node.x - cx) - c * (b.node.y - cy)));
    }
    let (sol, condition) = lstsq2(&rows, &rhs);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DegenerateGeometry { condition });
    }
    let position = Point2::new(sol[0] + cx, sol[1] + cy);
    if !(position.x.is_finite() && position.y.is_finite()) {
        return Err(Error::DegenerateGeometry { condition });
    }
    let residual = (bearings
        .bearings
        .iter()
        .map(|b| {
            let (s, c) = b.bearing.to_radians().sin_cos();
            let r = s * (position.x - b.node.x) - c * (position.y - b.node.y);
            r * r
        })
        .sum::<f64>()
        / n as f64)
        .sqrt();
    Ok(LocalizationEstimate {
        position,
        method: Method::Plse,
        residual,
    })
}

/// Least squares for an n×2 system via Householder QR; returns the solution
/// and the 2-norm condition number of the matrix.
fn lstsq2(rows: &[[f64; 2]], rhs: &[f64]) -> ([f64; 2], f64) {
    let mut a0: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut a1: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let mut b = rhs.to_vec();

    let r11 = reflect(&mut a0, &mut [&mut a1, &mut b]);
    let r12 = a1[0];
    let r22 = reflect(&mut a1[1..], &mut [&mut b[1..]]);

    let frob = r11 * r11 + r12 * r12 + r22 * r22;
    let det = (r11 * r22).abs();
    let disc = (frob * frob - 4.0 * det * det).max(0.0).sqrt();
    let s1 = ((frob + disc) / 2.0).sqrt();
    let s2 = if s1 > 0.0 { det / s1 } else { 0.0 };
    let condition = if s2 > 0.0 { s1 / s2 } else { f64::INFINITY };

    let y = b[1] / r22;
    let x = (b[0] - r12 * y) / r11;
    ([x, y], condition)
}

/// Applies the Householder reflection that maps `col` onto a multiple of
/// e_0 to every slice in `others`; returns the resulting diagonal entry.
fn reflect(col: &mut [f64], others: &mut [&mut [f64]]) -> f64 {
    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let alpha = if col[0] >= 0.0 { -norm } else { norm };
    col[0] -= alpha;
    let vnorm2: f64 = col.iter().map(|x| x * x).sum();
    for other in others.iter_mut() {
        let dot: f64 = col.iter().zip(other.iter()).map(|(a, b)| a * b).sum();
        let k = 2.0 * dot / vnorm2;
        for (o, vi) in other.iter_mut().zip(col.iter()) {
            *o -= k * vi;
        }
    }
    alpha
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyOptions {
    /// Grid cell size in metres.
    pub cell: f64,
    /// Half-width of the triangular membership in degrees.
    pub halfwidth: f64,
}

impl Default for FuzzyOptions {
    fn default() -> Self {
        Self {
            cell: 1.0,
            halfwidth: 10.0,
        }
    }
}

/// Fuzzy grid localization.
///
/// Each node's triangular membership `μ_n(g) = max(0, 1 − |Δθ|/halfwidth)`
/// is capped at a belief of `1/N` and the N beliefs are combined with the
/// product t-conorm `1 − Π(1 − μ_n/N)`. Cells are centred on the lattice
/// points `(i·cell, j·cell)`; the one with the largest aggregate wins, ties
/// going to the smallest x and then the smallest y.
/// A single bearing yields the projection of the winning cell onto its ray.
pub fn fuzzy_localize(
    bearings: &BearingSet,
    area: Area,
    opts: FuzzyOptions,
) -> Result<LocalizationEstimate> {
    if bearings.is_empty() {
        return Err(Error::invalid("fuzzy localization needs at least one bearing"));
    }
    if !(opts.cell > 0.0) || !(opts.halfwidth > 0.0) {
        return Err(Error::invalid("cell size and halfwidth must be positive"));
    }
    // canonical order so the floating-point product is independent of input order
    let mut sorted = bearings.bearings.clone();
    sorted.sort_by(|a, b| {
        a.node
            .x
            .total_cmp(&b.node.x)
            .then(a.node.y.total_cmp(&b.node.y))
            .then(a.bearing.total_cmp(&b.bearing))
    });
    let belief = 1.0 / sorted.len() as f64;
    // lattice points i·cell covering [0, w] × [0, h]
    let nx = (area.width / opts.cell).floor() as usize;
    let ny = (area.height / opts.cell).floor() as usize;

    let mut best = (f64::NEG_INFINITY, Point2::default());
    for i in 0..=nx {
        let x = i as f64 * opts.cell;
        for j in 0..=ny {
            let g = Point2::new(x, j as f64 * opts.cell);
            let s = aggregate(&sorted, g, opts.halfwidth, belief);
            if s > best.0 {
                best = (s, g);
            }
        }
    }
    let (score, mut position) = best;
    if sorted.len() == 1 {
        let b = sorted[0];
        let (s, c) = b.bearing.to_radians().sin_cos();
        let t = ((position.x - b.node.x) * c + (position.y - b.node.y) * s).max(0.0);
        position = b.node.translate(t * c, t * s);
    }
    Ok(LocalizationEstimate {
        position,
        method: Method::Fuzzy,
        residual: 1.0 - score,
    })
}

/// Triangular membership of cell centre `g` for one bearing.
pub fn membership(b: &Bearing, g: Point2, halfwidth: f64) -> f64 {
    if g == b.node {
        return 0.0;
    }
    let delta = angle_diff_deg(b.node.bearing_to(g), b.bearing).abs();
    (1.0 - delta / halfwidth).max(0.0)
}

/// Product t-conorm `1 − Π(1 − belief·μ_n)` over all bearings.
pub fn aggregate(bearings: &[Bearing], g: Point2, halfwidth: f64, belief: f64) -> f64 {
    1.0 - bearings
        .iter()
        .map(|b| 1.0 - belief * membership(b, g, halfwidth))
        .product::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bearing(x: f64, y: f64, deg: f64) -> Bearing {
        Bearing {
            node: Point2::new(x, y),
            bearing: deg,
            confidence: 2.0,
        }
    }

    #[test]
    fn plse_two_lines() {
        let set = BearingSet::new(vec![bearing(0.0, 0.0, 45.0), bearing(100.0, 0.0, 135.0)]);
        let est = plse_triangulate(&set).unwrap();
        assert!(est.position.distance(Point2::new(50.0, 50.0)) < 1e-6);
        assert!(est.residual < 1e-9);
        assert_eq!(est.method, Method::Plse);
    }

    #[test]
    fn plse_parallel_is_degenerate() {
        let set = BearingSet::new(vec![bearing(0.0, 0.0, 90.0), bearing(100.0, 0.0, 90.0)]);
        assert!(matches!(
            plse_triangulate(&set),
            Err(Error::DegenerateGeometry { .. })
        ));
        let opposite = BearingSet::new(vec![bearing(0.0, 0.0, 90.0), bearing(100.0, 0.0, 270.0)]);
        assert!(plse_triangulate(&opposite).is_err());
    }

    #[test]
    fn plse_needs_two() {
        assert!(plse_triangulate(&BearingSet::new(vec![bearing(0.0, 0.0, 10.0)])).is_err());
    }

    #[test]
    fn weighted_plse_ignores_flat_bearing() {
        let src = Point2::new(40.0, 70.0);
        let nodes = [Point2::new(0.0, 0.0), Point2::new(100.0, 0.0), Point2::new(0.0, 100.0)];
        let mut set = BearingSet::exact(&nodes, src);
        set.bearings.iter_mut().for_each(|b| b.confidence = 3.0);
        set.bearings.push(Bearing {
            node: Point2::new(100.0, 100.0),
            bearing: 0.0,
            confidence: 1.0,
        });
        let w = plse_triangulate_with(&set, PlseOptions { weighted: true }).unwrap();
        assert!(w.position.distance(src) < 1e-6);
        let u = plse_triangulate(&set).unwrap();
        assert!(u.position.distance(src) > 1.0);
    }

    #[test]
    fn fuzzy_single_bearing_lies_on_ray() {
        let set = BearingSet::new(vec![bearing(20.0, 30.0, 0.0)]);
        let area = Area::new(100.0, 100.0).unwrap();
        let est = fuzzy_localize(&set, area, FuzzyOptions::default()).unwrap();
        assert!((est.position.y - 30.0).abs() < 1e-12);
        assert!(est.position.x >= 20.0);
    }

    #[test]
    fn membership_shape() {
        let b = bearing(0.0, 0.0, 0.0);
        assert!((membership(&b, Point2::new(10.0, 0.0), 10.0) - 1.0).abs() < 1e-12);
        let g = Point2::new(10.0, 10.0 * 5f64.to_radians().tan());
        assert!((membership(&b, g, 10.0) - 0.5).abs() < 1e-9);
        assert_eq!(membership(&b, Point2::new(-10.0, 0.0), 10.0), 0.0);
        assert_eq!(membership(&b, Point2::new(0.0, 0.0), 10.0), 0.0);
    }

    #[test]
    fn clamp_to_expanded_area() {
        let est = LocalizationEstimate {
            position: Point2::new(-500.0, 60.0),
            method: Method::Plse,
            residual: 0.0,
        };
        let c = est.clamped(Area::new(100.0, 100.0).unwrap());
        assert_eq!(c.position, Point2::new(-20.0, 60.0));
    }
}
