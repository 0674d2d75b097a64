//! Affine structures on unstable and center leaves.
//!
//! Along a leaf the dynamics can be linearized: there is a density `ρ` on
//! the leaf, built from backward stretch ratios, whose primitive `R` turns
//! the map into multiplication by the per-step stretch at the base point.
//! Concretely, for a vertex `y` of a leaf curve anchored at `x`,
//!
//! ```text
//! ρ_x(y) = Π_{i ≥ 1}  λ(x_{-i}) / λ(y_{-i}),
//! R_x(y) = ∫_x^y ρ_x  (signed arclength quadrature),
//! ```
//!
//! where `λ` is the per-step stretch of the relevant bundle and the backward
//! orbits are matched (the vertex follows the same symbolic past as the
//! anchor). For linear maps every factor is 1, so `ρ ≡ 1` and `R` is the
//! signed arclength; the perturbed maps bend `ρ` only through the shear box.
//! Transition maps between charts anchored at different points of one leaf
//! are affine, with slope given by the density.

use serde::{Deserialize, Serialize};

use crate::error::{PhlabError, Result};
use crate::extension::PastWord;
use crate::leaves::{center_curve, unstable_arc, Curve};
use crate::maps::MapSpec;
use crate::splitting::center_stretch;
use crate::torus::{torus_distance, TangentVector, TorusPoint};

/// Which bundle's stretches the density is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bundle {
    Unstable,
    Center,
}

/// Maximal tolerated deviation of the deepest density factor from 1.
const DENSITY_TAIL_TOL: f64 = 1e-6;

/// Per-level unstable stretches `λ^u(w_{-i})` for `i = 1..=levels`, computed
/// in one pass by pushing a seed direction forward from the deepest
/// coordinate (the direction converges to `E^u` long before the shallow
/// levels, which dominate the density products).
fn unstable_level_stretches(map: &MapSpec, w: &PastWord, levels: usize) -> Vec<f64> {
    debug_assert!(levels <= w.depth());
    let mut v = TangentVector::new(1.0, 0.5).normalized();
    let mut out = vec![0.0; levels];
    for k in (1..=w.depth()).rev() {
        let image = map.derivative(w.coordinate(k)).mul_vec(v);
        let s = image.norm();
        if k <= levels {
            out[k - 1] = s;
        }
        v = image.scale(1.0 / s);
    }
    out
}

/// Per-level center stretches `λ^c(w_{-i})` for `i = 1..=levels`; center
/// stretches are local (past-independent), evaluated by pullback at each
/// backward coordinate.
fn center_level_stretches(map: &MapSpec, w: &PastWord, levels: usize) -> Result<Vec<f64>> {
    (1..=levels)
        .map(|i| center_stretch(map, w.coordinate(i), 40))
        .collect()
}

fn level_stretches(map: &MapSpec, w: &PastWord, bundle: Bundle, levels: usize) -> Result<Vec<f64>> {
    match bundle {
        Bundle::Unstable => Ok(unstable_level_stretches(map, w, levels)),
        Bundle::Center => center_level_stretches(map, w, levels),
    }
}

/// Leafwise density values at every vertex of a curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityProfile {
    pub rho: Vec<f64>,
    pub base_index: usize,
    pub truncation_depth: usize,
    /// Largest deviation of a deepest factor from 1 across vertices.
    pub max_last_factor_dev: f64,
}

/// Compute the density along a curve with respect to its base vertex.
///
/// `word` anchors the matched backward orbits: it must be based at the
/// curve's base point, and every vertex is pulled back following the same
/// symbolic past. Truncation at `truncation_depth` levels; a deepest factor
/// off 1 by more than `1e-6` signals non-convergence.
pub fn density_profile(
    map: &MapSpec,
    curve: &dyn Curve,
    word: &PastWord,
    bundle: Bundle,
    truncation_depth: usize,
) -> Result<DensityProfile> {
    if torus_distance(word.base(), curve.base()) > 1e-9 {
        return Err(PhlabError::InvalidParameter(
            "density word must be anchored at the curve base".into(),
        ));
    }
    if truncation_depth > word.depth() {
        return Err(PhlabError::InvalidParameter(format!(
            "truncation {} exceeds word depth {}",
            truncation_depth,
            word.depth()
        )));
    }
    let base_levels = level_stretches(map, word, bundle, truncation_depth)?;
    let mut rho = Vec::with_capacity(curve.points().len());
    let mut max_dev = 0.0f64;
    for v in curve.points() {
        let pw = word.parallel_past(map, *v)?;
        let levels = level_stretches(map, &pw, bundle, truncation_depth)?;
        let mut value = 1.0;
        for i in 0..truncation_depth {
            value *= base_levels[i] / levels[i];
        }
        let last_dev = if truncation_depth > 0 {
            (base_levels[truncation_depth - 1] / levels[truncation_depth - 1] - 1.0).abs()
        } else {
            0.0
        };
        if last_dev > DENSITY_TAIL_TOL {
            return Err(PhlabError::DensityNotConverged { deviation: last_dev });
        }
        max_dev = max_dev.max(last_dev);
        rho.push(value);
    }
    Ok(DensityProfile {
        rho,
        base_index: curve.base_index(),
        truncation_depth,
        max_last_factor_dev: max_dev,
    })
}

/// Density at a single target vertex (index into the curve's points).
pub fn density_rho(
    map: &MapSpec,
    curve: &dyn Curve,
    word: &PastWord,
    bundle: Bundle,
    target: usize,
    truncation_depth: usize,
) -> Result<f64> {
    let base_levels = level_stretches(map, word, bundle, truncation_depth)?;
    let pw = word.parallel_past(map, curve.points()[target])?;
    let levels = level_stretches(map, &pw, bundle, truncation_depth)?;
    let mut value = 1.0;
    for i in 0..truncation_depth {
        value *= base_levels[i] / levels[i];
    }
    if truncation_depth > 0 {
        let dev = (base_levels[truncation_depth - 1] / levels[truncation_depth - 1] - 1.0).abs();
        if dev > DENSITY_TAIL_TOL {
            return Err(PhlabError::DensityNotConverged { deviation: dev });
        }
    }
    Ok(value)
}

/// The normal-form coordinate along a curve: `R` by trapezoidal quadrature
/// of the density against arclength, with `R(base) = 0`, together with the
/// monotone inverse.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalChart {
    pub params: Vec<f64>,
    pub r: Vec<f64>,
    pub rho: Vec<f64>,
    pub base_index: usize,
}

impl NormalChart {
    /// `R` at signed arclength `s` (linear interpolation on the vertex grid).
    pub fn r_at(&self, s: f64) -> f64 {
        interp(&self.params, &self.r, s)
    }

    /// The inverse chart: arclength at chart value `r`.
    pub fn arclength_at(&self, r: f64) -> f64 {
        interp(&self.r, &self.params, r)
    }

    /// Discrete slope of `R` at the base (should be 1: the density is
    /// normalized there).
    pub fn base_slope(&self) -> f64 {
        let b = self.base_index;
        let (lo, hi) = if b == 0 {
            (b, b + 1)
        } else if b + 1 == self.r.len() {
            (b - 1, b)
        } else {
            (b - 1, b + 1)
        };
        (self.r[hi] - self.r[lo]) / (self.params[hi] - self.params[lo])
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= *xs.last().unwrap() {
        return *ys.last().unwrap();
    }
    let idx = match xs.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
        Ok(i) => return ys[i],
        Err(i) => i - 1,
    };
    let t = (x - xs[idx]) / (xs[idx + 1] - xs[idx]);
    ys[idx] + t * (ys[idx + 1] - ys[idx])
}

/// Build the normal chart on a curve.
pub fn normal_chart(
    map: &MapSpec,
    curve: &dyn Curve,
    word: &PastWord,
    bundle: Bundle,
    truncation_depth: usize,
) -> Result<NormalChart> {
    let density = density_profile(map, curve, word, bundle, truncation_depth)?;
    let params = curve.params().to_vec();
    let n = params.len();
    let mut r = vec![0.0; n];
    for i in 1..n {
        r[i] = r[i - 1] + 0.5 * (density.rho[i - 1] + density.rho[i]) * (params[i] - params[i - 1]);
    }
    let at_base = r[curve.base_index()];
    for v in r.iter_mut() {
        *v -= at_base;
    }
    Ok(NormalChart {
        params,
        r,
        rho: density.rho,
        base_index: curve.base_index(),
    })
}

/// An affine fit of one chart against another on the same curve.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AffineCheckReport {
    pub slope: f64,
    pub offset: f64,
    pub max_residual: f64,
}

/// Least-squares affine fit of `chart_b`'s coordinate as a function of
/// `chart_a`'s, over the shared vertex grid. For charts anchored at two
/// points of one leaf the transition is affine with slope equal to the
/// density of one base seen from the other.
pub fn affine_transition(chart_a: &NormalChart, chart_b: &NormalChart) -> Result<AffineCheckReport> {
    if chart_a.r.len() != chart_b.r.len() {
        return Err(PhlabError::ShapeMismatch(chart_a.r.len(), chart_b.r.len()));
    }
    let n = chart_a.r.len() as f64;
    let sx: f64 = chart_a.r.iter().sum();
    let sy: f64 = chart_b.r.iter().sum();
    let sxx: f64 = chart_a.r.iter().map(|x| x * x).sum();
    let sxy: f64 = chart_a.r.iter().zip(&chart_b.r).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let offset = (sy - slope * sx) / n;
    let max_residual = chart_a
        .r
        .iter()
        .zip(&chart_b.r)
        .map(|(x, y)| (y - (slope * x + offset)).abs())
        .fold(0.0, f64::max);
    Ok(AffineCheckReport {
        slope,
        offset,
        max_residual,
    })
}

/// Options for the two-dimensional center-unstable chart.
#[derive(Clone, Copy, Debug)]
pub struct CuChartOpts {
    pub resolution: f64,
    pub truncation_depth: usize,
}

impl Default for CuChartOpts {
    fn default() -> Self {
        CuChartOpts {
            resolution: 1e-3,
            truncation_depth: 40,
        }
    }
}

/// The two-dimensional normal chart `Φ(t, s)`: walk `s` in the center chart
/// to a point `y`, then walk `β(s)·t` in the unstable chart of the leaf
/// through `y`, where `β(s)` is the unstable density of the base seen from
/// `y`. `Φ(t, 0)` is the unstable chart, `Φ(0, s)` the center chart.
pub fn cu_chart(
    map: &MapSpec,
    word: &PastWord,
    t: f64,
    s: f64,
    opts: &CuChartOpts,
) -> Result<TorusPoint> {
    // Center leg.
    let c_radius = (1.5 * s.abs()).max(0.05);
    let curve = center_curve(map, word.base(), c_radius, opts.resolution)?;
    let c_chart = normal_chart(map, &curve, word, Bundle::Center, opts.truncation_depth)?;
    if s.abs() > c_chart.r.last().unwrap().abs().min(c_chart.r[0].abs()) {
        return Err(PhlabError::InvalidParameter(format!(
            "center coordinate {s} outside the chart"
        )));
    }
    let y = curve.point_at(c_chart.arclength_at(s));
    let w_y = word.parallel_past(map, y)?;

    // Transverse density β(s) = ρ^u_{ỹ}(x̃).
    let base_levels = unstable_level_stretches(map, &w_y, opts.truncation_depth);
    let target_levels = unstable_level_stretches(map, word, opts.truncation_depth);
    let mut beta = 1.0;
    for i in 0..opts.truncation_depth {
        beta *= base_levels[i] / target_levels[i];
    }

    // Unstable leg.
    let u_target = beta * t;
    let u_radius = (1.5 * u_target.abs()).max(0.05);
    let arc = unstable_arc(map, &w_y, u_radius, opts.resolution)?;
    let u_chart = normal_chart(map, &arc, &w_y, Bundle::Unstable, opts.truncation_depth)?;
    if u_target > *u_chart.r.last().unwrap() || u_target < u_chart.r[0] {
        return Err(PhlabError::InvalidParameter(format!(
            "unstable coordinate {u_target} outside the chart"
        )));
    }
    Ok(arc.point_at(u_chart.arclength_at(u_target)))
}
