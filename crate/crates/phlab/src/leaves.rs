//! Invariant curves and their geometry: unstable arcs by graph transform,
//! center curves by direction-field integration, center-stable holonomy,
//! specialness and coverage probes, and coupled configurations.
//!
//! Curves are polylines with signed arclength parameters anchored at a base
//! vertex. For measure pushing and coverage marking a lighter representation
//! is used: a [`SegmentChain`] of straight pieces that are mapped exactly
//! wherever the map is affine, so linear maps never accumulate vertices no
//! matter how long the arc grows.

use serde::{Deserialize, Serialize};

use crate::error::{PhlabError, Result};
use crate::extension::{shift_n, PastWord};
use crate::grid::traverse_segment;
use crate::maps::MapSpec;
use crate::rng::SplitMix64;
use crate::splitting::{
    center_direction, center_stretch, stopping_times, unstable_direction, LyapunovNormParams,
};
use crate::torus::{angle_between, torus_distance, TangentVector, TorusPoint};

/// Default cap on the number of chain segments a probe may create.
pub const DEFAULT_POINT_BUDGET: usize = 10_000_000;

/// Maximum chunk length mapped as a single affine piece for perturbed maps.
const CHUNK_LEN: f64 = 0.3;

/// Piece length used where a segment meets the shear support.
const FINE_LEN: f64 = 1e-3;

/// Common polyline interface for unstable arcs and center curves.
pub trait Curve {
    fn points(&self) -> &[TorusPoint];
    fn params(&self) -> &[f64];
    fn base_index(&self) -> usize;

    fn base(&self) -> TorusPoint {
        self.points()[self.base_index()]
    }

    /// Point at signed arclength `s` (clamped to the curve range).
    fn point_at(&self, s: f64) -> TorusPoint {
        let params = self.params();
        let points = self.points();
        if s <= params[0] {
            return points[0];
        }
        if s >= *params.last().unwrap() {
            return *points.last().unwrap();
        }
        let idx = match params.binary_search_by(|p| p.partial_cmp(&s).unwrap()) {
            Ok(i) => return points[i],
            Err(i) => i - 1,
        };
        let (dx, dy) = points[idx + 1].delta_to(points[idx]);
        let seg = params[idx + 1] - params[idx];
        let t = (s - params[idx]) / seg;
        points[idx].offset(t * dx, t * dy)
    }
}

/// A copy of a curve re-anchored at a different vertex (parameters shifted
/// so the new base has arclength 0).
#[derive(Clone, Debug)]
pub struct RebasedCurve {
    points: Vec<TorusPoint>,
    params: Vec<f64>,
    base_index: usize,
}

impl RebasedCurve {
    pub fn new(curve: &dyn Curve, base_index: usize) -> RebasedCurve {
        let at_base = curve.params()[base_index];
        RebasedCurve {
            points: curve.points().to_vec(),
            params: curve.params().iter().map(|s| s - at_base).collect(),
            base_index,
        }
    }
}

impl Curve for RebasedCurve {
    fn points(&self) -> &[TorusPoint] {
        &self.points
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn base_index(&self) -> usize {
        self.base_index
    }
}

/// Arclength of the orthogonal projection of `p` onto the curve, with the
/// projection distance, or `None` if `p` is farther than `tol` from every
/// segment.
pub fn locate_on_curve(curve: &dyn Curve, p: TorusPoint, tol: f64) -> Option<(f64, f64)> {
    let points = curve.points();
    let params = curve.params();
    let mut best: Option<(f64, f64)> = None;
    for i in 0..points.len() - 1 {
        let (ex, ey) = points[i + 1].delta_to(points[i]);
        let len = ex.hypot(ey);
        if len == 0.0 {
            continue;
        }
        let (px, py) = p.delta_to(points[i]);
        let t = ((px * ex + py * ey) / (len * len)).clamp(0.0, 1.0);
        let (qx, qy) = (t * ex, t * ey);
        let dist = (px - qx).hypot(py - qy);
        let s = params[i] + t * len;
        if best.is_none_or(|(_, d)| dist < d) {
            best = Some((s, dist));
        }
    }
    best.filter(|(_, d)| *d <= tol)
}

/// A local piece of an unstable leaf, anchored at the past that selects the
/// leaf.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnstableArc {
    pub past: PastWord,
    points: Vec<TorusPoint>,
    params: Vec<f64>,
    base_index: usize,
}

impl Curve for UnstableArc {
    fn points(&self) -> &[TorusPoint] {
        &self.points
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn base_index(&self) -> usize {
        self.base_index
    }
}

impl UnstableArc {
    /// Wrap an explicit polyline as an unstable arc (for seed arcs whose
    /// geometry is known exactly, e.g. an invariant circle). The caller
    /// vouches that the polyline lies on the unstable leaf of `past`.
    pub fn from_polyline(
        past: PastWord,
        points: Vec<TorusPoint>,
        base_index: usize,
    ) -> Result<UnstableArc> {
        if points.len() < 2 || base_index >= points.len() {
            return Err(PhlabError::InvalidParameter(
                "polyline arc needs at least two points and a valid base index".into(),
            ));
        }
        let params = anchored_params(&points, base_index);
        Ok(UnstableArc {
            past,
            points,
            params,
            base_index,
        })
    }
}

/// A local piece of a center leaf.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CenterCurve {
    points: Vec<TorusPoint>,
    params: Vec<f64>,
    base_index: usize,
}

impl Curve for CenterCurve {
    fn points(&self) -> &[TorusPoint] {
        &self.points
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn base_index(&self) -> usize {
        self.base_index
    }
}

/// Cumulative signed arclength anchored so `params[base_index] = 0`.
fn anchored_params(points: &[TorusPoint], base_index: usize) -> Vec<f64> {
    let mut params = vec![0.0; points.len()];
    for i in 1..points.len() {
        let (dx, dy) = points[i].delta_to(points[i - 1]);
        params[i] = params[i - 1] + dx.hypot(dy);
    }
    let at_base = params[base_index];
    for p in params.iter_mut() {
        *p -= at_base;
    }
    params
}

/// Insert interpolated vertices so no chord exceeds `max_chord`.
///
/// Insertions use a centripetal-free (chordal) Catmull-Rom cubic through the
/// neighboring vertices rather than the chord itself: these leaves carry
/// curvature on many scales, and chord insertion would cap the transversal
/// accuracy of the whole graph transform at well below second order.
#[allow(clippy::needless_range_loop)] // the index drives base bookkeeping and lookahead
fn resample(points: &[TorusPoint], base_index: usize, max_chord: f64) -> (Vec<TorusPoint>, usize) {
    let n = points.len();
    // Control points in the chart around `points[i]`, built by chaining the
    // min-image deltas of consecutive vertices (a single long delta could
    // wrap to the other side of the torus), reflecting at the ends.
    let chain = |i: usize| -> ((f64, f64), (f64, f64), (f64, f64)) {
        let anchor = points[i];
        let p2 = points[i + 1].delta_to(anchor);
        let p0 = if i == 0 {
            (-p2.0, -p2.1)
        } else {
            let d = points[i - 1].delta_to(anchor);
            (d.0, d.1)
        };
        let p3 = if i + 2 >= n {
            (2.0 * p2.0, 2.0 * p2.1)
        } else {
            let d = points[i + 2].delta_to(points[i + 1]);
            (p2.0 + d.0, p2.1 + d.1)
        };
        (p0, p2, p3)
    };
    let mut out = Vec::with_capacity(n);
    let mut new_base = 0;
    for i in 0..n {
        if i == base_index {
            new_base = out.len();
        }
        out.push(points[i]);
        if i + 1 < n {
            let anchor = points[i];
            let p1 = (0.0, 0.0);
            let (p0, p2, p3) = chain(i);
            let len = p2.0.hypot(p2.1);
            if len > max_chord {
                // Chordal parameters.
                let t0 = -(p1.0 - p0.0).hypot(p1.1 - p0.1);
                let t2 = len;
                let t3 = t2 + (p3.0 - p2.0).hypot(p3.1 - p2.1);
                // Finite-difference tangents scaled to the [0, 1] segment.
                let m1 = (
                    (p2.0 - p0.0) / (t2 - t0) * t2,
                    (p2.1 - p0.1) / (t2 - t0) * t2,
                );
                let m2 = (
                    (p3.0 - p1.0) / (t3 - 0.0) * t2,
                    (p3.1 - p1.1) / (t3 - 0.0) * t2,
                );
                let m = (len / max_chord).ceil() as usize;
                for k in 1..m {
                    let u = k as f64 / m as f64;
                    let (h00, h10, h01, h11) = (
                        2.0 * u * u * u - 3.0 * u * u + 1.0,
                        u * u * u - 2.0 * u * u + u,
                        -2.0 * u * u * u + 3.0 * u * u,
                        u * u * u - u * u,
                    );
                    let x = h00 * p1.0 + h10 * m1.0 + h01 * p2.0 + h11 * m2.0;
                    let y = h00 * p1.1 + h10 * m1.1 + h01 * p2.1 + h11 * m2.1;
                    out.push(anchor.offset(x, y));
                }
            }
        }
    }
    (out, new_base)
}

/// Cut the polyline to `|param| <= radius`, interpolating exact endpoints.
fn trim(
    points: &[TorusPoint],
    params: &[f64],
    base_index: usize,
    radius: f64,
) -> Result<(Vec<TorusPoint>, usize)> {
    let interp = |i: usize, target: f64| -> TorusPoint {
        let (dx, dy) = points[i + 1].delta_to(points[i]);
        let t = (target - params[i]) / (params[i + 1] - params[i]);
        points[i].offset(t * dx, t * dy)
    };
    let mut out = Vec::new();
    let mut new_base = None;
    for i in 0..points.len() {
        if params[i] < -radius {
            if i + 1 < points.len() && params[i + 1] > -radius {
                out.push(interp(i, -radius));
            }
            continue;
        }
        if params[i] > radius {
            if out.last().is_none() {
                break;
            }
            let prev = i - 1;
            if params[prev] < radius {
                out.push(interp(prev, radius));
            }
            break;
        }
        if i == base_index {
            new_base = Some(out.len());
        }
        out.push(points[i]);
    }
    match new_base {
        Some(b) if out.len() >= 2 => Ok((out, b)),
        _ => Err(PhlabError::ArcEmpty),
    }
}

/// Build the unstable arc through the base of `w`, tangent to `E^u(w)`, of
/// the given arclength radius, by the graph transform: seed a segment at the
/// deepest coordinate, push it forward, trim to a window, resample, repeat.
pub fn unstable_arc(
    map: &MapSpec,
    w: &PastWord,
    radius: f64,
    resolution: f64,
) -> Result<UnstableArc> {
    if !(radius > 0.0 && resolution > 0.0 && resolution < 0.1) {
        return Err(PhlabError::InvalidParameter(
            "unstable arc needs radius > 0 and resolution in (0, 0.1)".into(),
        ));
    }
    // Depth must beat the domination rate: the transversal error of the
    // graph transform is (λc/λu)^depth.
    let lc = center_stretch(map, w.base(), 40)?;
    let (e_u_base, _) = unstable_direction(map, w)?;
    let lu = map
        .derivative(w.base())
        .mul_vec(e_u_base.unit_vector())
        .norm();
    if (lc / lu).powi(w.depth() as i32) > 1e-6 {
        return Err(PhlabError::InvalidParameter(format!(
            "depth {} too shallow for the domination rate {:.3}",
            w.depth(),
            lc / lu
        )));
    }

    let window = radius + 0.02 + 4.0 * resolution;
    let seed_dir = TangentVector::new(1.0, 0.5).normalized();
    let deep = w.last_point();
    let mut points = vec![
        deep.offset(-window * seed_dir.vx, -window * seed_dir.vy),
        deep,
        deep.offset(window * seed_dir.vx, window * seed_dir.vy),
    ];
    let mut base_index = 1;
    // Resample finely enough that chords still meet the resolution after
    // mapping; otherwise the arclength bookkeeping under-resolves the
    // curvature near the shear box and loses its second-order accuracy.
    let m = map.linear_mat();
    let pre_map_resolution = {
        let op_norm_sq = {
            let (a, b, c, d) = (m.a, m.b, m.c, m.d);
            let t = a * a + b * b + c * c + d * d;
            let det = m.det();
            0.5 * (t + (t * t - 4.0 * det * det).sqrt())
        };
        resolution / (op_norm_sq.sqrt() * 1.3)
    };
    for step in 0..w.depth() {
        let (res_pts, res_base) = resample(&points, base_index, pre_map_resolution);
        let mut mapped: Vec<TorusPoint> = res_pts.iter().map(|p| map.evaluate(*p)).collect();
        // Re-anchor the base vertex on the exact backward coordinate:
        // rounding kicks slide the anchor along the leaf and the slide is
        // amplified by the unstable stretch at every subsequent step.
        mapped[res_base] = w.coordinate(w.depth() - step - 1);
        let params = anchored_params(&mapped, res_base);
        let (trimmed, trimmed_base) = trim(&mapped, &params, res_base, window)?;
        points = trimmed;
        base_index = trimmed_base;
    }
    let (res_pts, res_base) = resample(&points, base_index, resolution);
    let params = anchored_params(&res_pts, res_base);
    let (final_pts, final_base) = trim(&res_pts, &params, res_base, radius)?;
    let final_params = anchored_params(&final_pts, final_base);
    if *final_params.last().unwrap() < radius - 2.0 * resolution
        || final_params[0] > -(radius - 2.0 * resolution)
    {
        return Err(PhlabError::ArcEmpty);
    }
    Ok(UnstableArc {
        past: w.clone(),
        points: final_pts,
        params: final_params,
        base_index: final_base,
    })
}

/// Pullback depth for center-direction evaluations during curve integration.
const CENTER_FIELD_DEPTH: usize = 30;

fn center_field(map: &MapSpec, z: TorusPoint, along: TangentVector) -> TangentVector {
    let mut v = TangentVector::new(0.5, 1.0);
    let mut orbit = z;
    let mut jacs = Vec::with_capacity(CENTER_FIELD_DEPTH);
    for _ in 0..CENTER_FIELD_DEPTH {
        jacs.push(map.derivative(orbit));
        orbit = map.evaluate(orbit);
    }
    for j in jacs.iter().rev() {
        v = j.inverse().mul_vec(v).normalized();
    }
    if v.dot(along) < 0.0 {
        v.scale(-1.0)
    } else {
        v
    }
}

/// Integrate the center direction field through `p` with 4th-order stepping
/// to arclength `radius` on both sides.
pub fn center_curve(
    map: &MapSpec,
    p: TorusPoint,
    radius: f64,
    resolution: f64,
) -> Result<CenterCurve> {
    if !(radius > 0.0 && resolution > 0.0 && resolution < 0.05) {
        return Err(PhlabError::InvalidParameter(
            "center curve needs radius > 0 and resolution in (0, 0.05)".into(),
        ));
    }
    let (e_c, _) = center_direction(map, p, 40)?;
    let start_dir = e_c.unit_vector();

    let rk4 = |z: TorusPoint, dir: TangentVector, h: f64| -> (TorusPoint, TangentVector) {
        let k1 = center_field(map, z, dir);
        let k2 = center_field(map, z.offset(0.5 * h * k1.vx, 0.5 * h * k1.vy), k1);
        let k3 = center_field(map, z.offset(0.5 * h * k2.vx, 0.5 * h * k2.vy), k2);
        let k4 = center_field(map, z.offset(h * k3.vx, h * k3.vy), k3);
        let vx = (k1.vx + 2.0 * k2.vx + 2.0 * k3.vx + k4.vx) / 6.0;
        let vy = (k1.vy + 2.0 * k2.vy + 2.0 * k3.vy + k4.vy) / 6.0;
        (z.offset(h * vx, h * vy), TangentVector::new(vx, vy).normalized())
    };

    let march = |sign: f64| -> Result<Vec<TorusPoint>> {
        let mut out = Vec::new();
        let mut z = p;
        let mut dir = start_dir.scale(sign);
        let mut s = 0.0;
        while s < radius - 1e-12 {
            let h = resolution.min(radius - s);
            let mut step = h;
            let mut halvings = 0;
            let (mut z_next, mut dir_next) = rk4(z, dir, step);
            loop {
                let (half1, dir_half) = rk4(z, dir, step / 2.0);
                let (half2, _) = rk4(half1, dir_half, step / 2.0);
                if torus_distance(z_next, half2) <= 1e-9 || halvings >= 10 {
                    if halvings >= 10 {
                        return Err(PhlabError::StepRejected { halvings, s });
                    }
                    break;
                }
                halvings += 1;
                step /= 2.0;
                let next = rk4(z, dir, step);
                z_next = next.0;
                dir_next = next.1;
            }
            z = z_next;
            dir = dir_next;
            s += step;
            out.push(z);
        }
        Ok(out)
    };

    let backward = march(-1.0)?;
    let forward = march(1.0)?;
    let mut points: Vec<TorusPoint> = backward.into_iter().rev().collect();
    let base_index = points.len();
    points.push(p);
    points.extend(forward);
    let params = anchored_params(&points, base_index);
    Ok(CenterCurve {
        points,
        params,
        base_index,
    })
}

/// A straight piece of curve in the plane: wrapped start, unit direction,
/// length (may exceed 1, wrapping around the torus).
#[derive(Clone, Copy, Debug)]
pub struct Segment {
    pub start: TorusPoint,
    pub dir: (f64, f64),
    pub len: f64,
}

/// A curve as a list of straight pieces; the representation used for
/// pushforward of arclength mass and for coverage marking.
#[derive(Clone, Debug, Default)]
pub struct SegmentChain {
    pub segments: Vec<Segment>,
}

impl SegmentChain {
    pub fn from_curve(curve: &dyn Curve) -> SegmentChain {
        let pts = curve.points();
        let mut segments = Vec::with_capacity(pts.len().saturating_sub(1));
        for i in 0..pts.len() - 1 {
            let (dx, dy) = pts[i + 1].delta_to(pts[i]);
            let len = dx.hypot(dy);
            if len > 0.0 {
                segments.push(Segment {
                    start: pts[i],
                    dir: (dx / len, dy / len),
                    len,
                });
            }
        }
        SegmentChain { segments }
    }

    pub fn total_len(&self) -> f64 {
        self.segments.iter().map(|s| s.len).sum()
    }

    /// Push every segment forward once. Pieces on which the map is affine
    /// (linear maps, or chunks clear of the shear support) map exactly to
    /// single segments; pieces meeting the support are subdivided finely.
    pub fn push_forward(&self, map: &MapSpec, budget: usize) -> Result<SegmentChain> {
        let lin = map.linear_mat();
        let mut out = Vec::with_capacity(self.segments.len());
        let emit_affine = |seg: &Segment, out: &mut Vec<Segment>| {
            let v = lin.mul_vec(TangentVector::new(seg.dir.0, seg.dir.1));
            let stretch = v.norm();
            out.push(Segment {
                start: map.evaluate(seg.start),
                dir: (v.vx / stretch, v.vy / stretch),
                len: seg.len * stretch,
            });
        };
        for seg in &self.segments {
            if map.is_linear() {
                emit_affine(seg, &mut out);
                continue;
            }
            let q = map.support_center().unwrap();
            let r = map.support_radius();
            let chunks = (seg.len / CHUNK_LEN).ceil().max(1.0) as usize;
            let chunk_len = seg.len / chunks as f64;
            for k in 0..chunks {
                let t0 = k as f64 * chunk_len;
                let start = seg.start.offset(t0 * seg.dir.0, t0 * seg.dir.1);
                let mid = start.offset(0.5 * chunk_len * seg.dir.0, 0.5 * chunk_len * seg.dir.1);
                let chunk = Segment {
                    start,
                    dir: seg.dir,
                    len: chunk_len,
                };
                // Exact distance from the support center to the chunk, in the
                // chart around the chunk midpoint (chunks are short enough
                // that the nearest wrapped copy of q is the one that counts).
                let (qx, qy) = q.delta_to(mid);
                let t = (qx * seg.dir.0 + qy * seg.dir.1).clamp(-0.5 * chunk_len, 0.5 * chunk_len);
                let dist = (qx - t * seg.dir.0).hypot(qy - t * seg.dir.1);
                if dist > r + 1e-9 {
                    emit_affine(&chunk, &mut out);
                } else {
                    let pieces = (chunk_len / FINE_LEN).ceil().max(1.0) as usize;
                    let piece = chunk_len / pieces as f64;
                    let mut prev = map.evaluate(start);
                    for m in 1..=pieces {
                        let t = m as f64 * piece;
                        let next = map.evaluate(start.offset(t * seg.dir.0, t * seg.dir.1));
                        let (dx, dy) = next.delta_to(prev);
                        let len = dx.hypot(dy);
                        if len > 0.0 {
                            out.push(Segment {
                                start: prev,
                                dir: (dx / len, dy / len),
                                len,
                            });
                        }
                        prev = next;
                    }
                }
                if out.len() > budget {
                    return Err(PhlabError::ChainBudget { budget });
                }
            }
        }
        Ok(SegmentChain { segments: out })
    }

    /// Mark every grid cell the chain passes through.
    pub fn mark_mask(&self, grid_n: usize, mask: &mut [bool]) {
        for seg in &self.segments {
            traverse_segment(
                grid_n,
                (seg.start.x(), seg.start.y()),
                seg.dir,
                seg.len,
                &mut |cell, _| mask[cell] = true,
            );
        }
    }

    /// Accumulate arclength mass per grid cell (unnormalized).
    pub fn accumulate_mass(&self, grid_n: usize, mass: &mut [f64]) {
        for seg in &self.segments {
            traverse_segment(
                grid_n,
                (seg.start.x(), seg.start.y()),
                seg.dir,
                seg.len,
                &mut |cell, l| mass[cell] += l,
            );
        }
    }
}

/// Cumulative coverage of the torus by the forward images of an arc.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageReport {
    pub grid_n: usize,
    /// Fraction of grid cells visited after 0, 1, ..., iterations pushes.
    pub visited_fraction: Vec<f64>,
    pub mask: Vec<bool>,
}

impl CoverageReport {
    pub fn final_fraction(&self) -> f64 {
        *self.visited_fraction.last().unwrap()
    }

    /// Portable bitmap (P1) rendering of the mask, visited cells as 1,
    /// row 0 at the bottom.
    pub fn to_pbm(&self) -> String {
        let n = self.grid_n;
        let mut s = format!("P1\n{n} {n}\n");
        for j in (0..n).rev() {
            for i in 0..n {
                s.push(if self.mask[j * n + i] { '1' } else { '0' });
                s.push(if i + 1 == n { '\n' } else { ' ' });
            }
        }
        s
    }
}

fn fraction(mask: &[bool]) -> f64 {
    mask.iter().filter(|b| **b).count() as f64 / mask.len() as f64
}

/// Push an arc forward repeatedly, marking visited grid cells cumulatively.
pub fn minimality_probe(
    map: &MapSpec,
    arc: &UnstableArc,
    iterations: usize,
    grid_n: usize,
    budget: usize,
) -> Result<CoverageReport> {
    let mut chain = SegmentChain::from_curve(arc);
    let mut mask = vec![false; grid_n * grid_n];
    chain.mark_mask(grid_n, &mut mask);
    let mut visited_fraction = vec![fraction(&mask)];
    for it in 1..=iterations {
        chain = match chain.push_forward(map, budget) {
            Ok(c) => c,
            Err(PhlabError::ChainBudget { .. }) => {
                return Err(PhlabError::CoverageBudget {
                    completed: it - 1,
                    partial: Box::new(CoverageReport {
                        grid_n,
                        visited_fraction,
                        mask,
                    }),
                });
            }
            Err(e) => return Err(e),
        };
        chain.mark_mask(grid_n, &mut mask);
        visited_fraction.push(fraction(&mask));
    }
    Ok(CoverageReport {
        grid_n,
        visited_fraction,
        mask,
    })
}

/// Spread of unstable directions across sampled pasts of one point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpecialnessReport {
    pub base: TorusPoint,
    pub depth: usize,
    pub sample_count: usize,
    /// Maximal pairwise projective angle.
    pub angle_spread: f64,
    /// Angle of `E^u` for each sampled past, aligned with the sample order.
    pub per_word_theta: Vec<f64>,
}

/// Estimate the fiber angle spread at `p`: compute `E^u` for `samples`
/// distinct random pasts (plus any caller-provided pasts) and report the
/// maximal pairwise angle.
pub fn specialness_probe(
    map: &MapSpec,
    p: TorusPoint,
    depth: usize,
    samples: usize,
    seed: u64,
    extra_pasts: &[PastWord],
) -> Result<SpecialnessReport> {
    use rayon::prelude::*;

    if samples < 2 {
        return Err(PhlabError::InvalidParameter(
            "specialness probe needs at least 2 samples".into(),
        ));
    }
    let fiber = crate::extension::fiber_sample(map, p, depth, samples, seed)?;
    let mut words = fiber.words;
    words.extend_from_slice(extra_pasts);
    let dirs: Vec<crate::torus::Direction> = words
        .par_iter()
        .map(|w| unstable_direction(map, w).map(|(d, _)| d))
        .collect::<Result<Vec<_>>>()?;
    let mut spread = 0.0f64;
    for i in 0..dirs.len() {
        for j in (i + 1)..dirs.len() {
            spread = spread.max(angle_between(dirs[i], dirs[j]));
        }
    }
    Ok(SpecialnessReport {
        base: p,
        depth,
        sample_count: words.len(),
        angle_spread: spread,
        per_word_theta: dirs.iter().map(|d| d.theta()).collect(),
    })
}

/// Result of sliding a point along its center curve onto another unstable
/// arc.
#[derive(Clone, Copy, Debug)]
pub struct Holonomy {
    pub point: TorusPoint,
    /// Signed center arclength travelled from the source point.
    pub displacement: f64,
}

/// Center-stable holonomy between two unstable arcs through a common base
/// point: follow the center curve through `p_u` until it crosses `arc_y`.
pub fn cs_holonomy(
    map: &MapSpec,
    arc_x: &UnstableArc,
    arc_y: &UnstableArc,
    p_u: TorusPoint,
    search_radius: f64,
) -> Result<Holonomy> {
    if torus_distance(arc_x.base(), arc_y.base()) > 1e-9 {
        return Err(PhlabError::InvalidParameter(
            "holonomy arcs must share the base point".into(),
        ));
    }
    let curve = center_curve(map, p_u, search_radius, 1e-3)?;
    let cpts = curve.points();
    let cpar = curve.params();
    let ypts = arc_y.points();
    let mut best: Option<Holonomy> = None;
    for i in 0..cpts.len() - 1 {
        let (cex, cey) = cpts[i + 1].delta_to(cpts[i]);
        for j in 0..ypts.len() - 1 {
            // Quick reject: segment anchors far apart.
            if torus_distance(cpts[i], ypts[j]) > 0.1 {
                continue;
            }
            let (ax, ay) = ypts[j].delta_to(cpts[i]);
            let (aex, aey) = ypts[j + 1].delta_to(ypts[j]);
            // Solve c_i + t (ce) = a_j + u (ae).
            let det = -cex * aey + cey * aex;
            if det.abs() < 1e-18 {
                continue;
            }
            let t = (-(ax) * aey + ay * aex) / det;
            let u = (cex * ay - cey * ax) / det;
            if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&u) {
                continue;
            }
            let s = cpar[i] + t * cex.hypot(cey);
            if best.is_none_or(|h| s.abs() < h.displacement.abs()) {
                best = Some(Holonomy {
                    point: cpts[i].offset(t * cex, t * cey),
                    displacement: s,
                });
            }
        }
    }
    best.ok_or(PhlabError::NoCrossing)
}

/// Parameters of a coupled-configuration measurement.
#[derive(Clone, Copy, Debug)]
pub struct YConfigParams {
    /// Admissibility: fiber angle must exceed `1/beta`, and the unstable
    /// offset of `x_u` must lie in `(1/beta, 1)`.
    pub beta: f64,
    pub lyap: LyapunovNormParams,
    /// Truncation depth for the density chart at the stopped point.
    pub chart_truncation: usize,
}

/// Outcome of one coupled configuration: the stopping data and the center
/// displacements before and after the stopped iteration, both measured in
/// normal-chart coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct YConfigRecord {
    pub ell: usize,
    /// Fiber angle at depth `ell`.
    pub alpha: f64,
    /// Unstable offset of `x_u` from the base.
    pub d_u: f64,
    pub tau: usize,
    pub t: usize,
    /// Number of steps the u-points were pushed (`= tau`).
    pub m: usize,
    pub displacement_before: f64,
    pub displacement_after: f64,
}

/// Measure the center drift along a coupled pair of configurations.
///
/// `x_word` and `y_word` must share the base point and agree to depth `ell`
/// (so their depth-`ell` points coincide on the torus) while carrying
/// different deeper pasts; the angle between the unstable directions at the
/// depth-`ell` point must exceed `1/beta`.
///
/// The center offset between the two leaves is measured geometrically at
/// depth `ell`, where both leaves pass through the same point and the
/// configuration is exactly linearizable, and is then transported by the
/// center-stretch cocycle along the actual orbit of `x_u`. The pair is
/// propagated in center-offset coordinates rather than as two bare points:
/// at stretch factors of order `λ_u^τ`, independently iterated points lose
/// all mutual accuracy to rounding noise long before the stopping time.
pub fn y_configuration(
    map: &MapSpec,
    x_word: &PastWord,
    y_word: &PastWord,
    x_u: TorusPoint,
    epsilon: f64,
    ell: usize,
    params: &YConfigParams,
) -> Result<YConfigRecord> {
    if torus_distance(x_word.base(), y_word.base()) > 1e-9 {
        return Err(PhlabError::InvalidParameter(
            "configuration words must share the base point".into(),
        ));
    }
    if ell > x_word.depth() || ell > y_word.depth() {
        return Err(PhlabError::InvalidParameter(
            "ell exceeds word depth".into(),
        ));
    }
    if torus_distance(x_word.coordinate(ell), y_word.coordinate(ell)) > 1e-9 {
        return Err(PhlabError::InvalidParameter(
            "words must agree to depth ell".into(),
        ));
    }
    let d_u = torus_distance(x_u, x_word.base());
    if !(d_u > 1.0 / params.beta && d_u < 1.0) {
        return Err(PhlabError::InvalidParameter(format!(
            "unstable offset {d_u:.4} outside (1/beta, 1)"
        )));
    }

    let x_deep = x_word.truncate_front(ell);
    let y_deep = y_word.truncate_front(ell);
    let (dir_x, _) = unstable_direction(map, &x_deep)?;
    let (dir_y, _) = unstable_direction(map, &y_deep)?;
    let alpha = angle_between(dir_x, dir_y);
    if alpha <= 1.0 / params.beta {
        return Err(PhlabError::DegenerateCoupling {
            angle: alpha,
            threshold: 1.0 / params.beta,
        });
    }

    // Geometric center offset between the two leaves at depth ell: decompose
    // the (microscopic) offset of x^u_{-ell} from the shared deep point into
    // the y-leaf direction and the center direction.
    let xu_word = x_word.parallel_past(map, x_u)?;
    let deep_point = x_word.coordinate(ell);
    let (ox, oy) = xu_word.coordinate(ell).delta_to(deep_point);
    let (e_c_deep, _) = center_direction(map, deep_point, 40)?;
    let uy = dir_y.unit_vector();
    let ec = e_c_deep.unit_vector();
    let det = uy.vx * ec.vy - uy.vy * ec.vx;
    if det.abs() < 1e-9 {
        return Err(PhlabError::DegenerateCoupling {
            angle: det.abs(),
            threshold: 1e-9,
        });
    }
    // Solve (ox, oy) = a·uy + b·ec; b is the center offset from the y-leaf.
    let b = (uy.vx * oy - uy.vy * ox) / det;

    // Transport to time 0 along the orbit of x^u.
    let mut c = b;
    for i in (1..=ell).rev() {
        c *= center_stretch(map, xu_word.coordinate(i), 40)?;
    }
    let displacement_before = c.abs();

    let stopping = stopping_times(map, x_word, x_u, epsilon, ell, &params.lyap)?;
    let m = stopping.tau;

    // Pair propagation in center-offset coordinates.
    let mut z = x_u;
    for _ in 0..m {
        let (e_c, _) = center_direction(map, z, 40)?;
        let u = e_c.unit_vector();
        let z_next = map.evaluate(z);
        if c.abs() > 1e-7 {
            let y_pt = z.offset(c * u.vx, c * u.vy);
            let y_next = map.evaluate(y_pt);
            let (dx, dy) = y_next.delta_to(z_next);
            let (e_c_next, _) = center_direction(map, z_next, 40)?;
            let un = e_c_next.unit_vector();
            c = dx * un.vx + dy * un.vy;
        } else {
            c *= map.derivative(z).mul_vec(u).norm();
        }
        z = z_next;
        if c.abs() > 0.45 {
            return Err(PhlabError::InvalidParameter(format!(
                "center displacement {c:.3} left the chart during propagation"
            )));
        }
    }

    // Read the displacement in the normal chart on the center curve at the
    // stopped point.
    let radius = (1.5 * c.abs()).max(0.05);
    let curve = center_curve(map, z, radius, 1e-3)?;
    let word_m = shift_n(map, &xu_word, m)?;
    let chart = crate::normal_form::normal_chart(
        map,
        &curve,
        &word_m,
        crate::normal_form::Bundle::Center,
        params.chart_truncation,
    )?;
    let displacement_after = chart.r_at(c).abs();

    Ok(YConfigRecord {
        ell,
        alpha,
        d_u,
        tau: stopping.tau,
        t: stopping.t,
        m,
        displacement_before,
        displacement_after,
    })
}

/// Uniform-random past sampling helper shared by probes and experiments.
pub fn random_past(
    map: &MapSpec,
    p: TorusPoint,
    depth: usize,
    rng: &mut SplitMix64,
) -> Result<PastWord> {
    crate::extension::extend_past(map, p, &mut crate::extension::Chooser::Uniform(rng), depth)
}
