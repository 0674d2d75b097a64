//! The endomorphisms under study: linear torus maps and their bump-sheared
//! perturbations, with evaluation, derivatives, inverse branches, and
//! sampling-based certification of the unstable cone condition.
//!
//! A map is either the endomorphism induced by an integer matrix with
//! `|det| ≥ 2`, or such a map composed with a compactly supported shear
//! `φ` that displaces points along a fixed direction inside a small square
//! box. The shear is the classical device for destroying uniqueness of the
//! unstable direction while keeping the center foliation intact: the
//! displacement direction is an eigendirection of the composed derivative,
//! so center leaves are carried to center leaves exactly.

use serde::{Deserialize, Serialize};

use crate::error::{PhlabError, Result};
use crate::torus::{torus_distance, Direction, Mat2, TangentVector, TorusPoint};

/// Profile functions for the shear displacement.
///
/// `psi1` is odd with support in `[-1, 1]`, equal to `2s` on `[-1/2, 1/2]`
/// (so `psi1(±1/2) = ±1`) and joined to zero at `±1` by quintic Hermite
/// connectors matching value and first two derivatives at both junctions.
/// `psi2` is an even `C²` plateau: `1` on `[-1/2, 1/2]`, quintic Hermite
/// down to `0` at `±1`.
pub mod bump {
    /// Quintic `1 → 0` connector with vanishing first and second derivatives
    /// at both ends: the Hermite basis function `H0`.
    fn h0(u: f64) -> f64 {
        1.0 + u * u * u * (-10.0 + u * (15.0 - 6.0 * u))
    }

    fn h0_deriv(u: f64) -> f64 {
        u * u * (-30.0 + u * (60.0 - 30.0 * u))
    }

    /// Connector for `psi1` on `[1/2, 1]` in the local coordinate
    /// `u = 2s - 1`: value `1`, slope `1` (in `u`), curvature `0` at `u = 0`;
    /// all zero at `u = 1`.
    fn p1(u: f64) -> f64 {
        1.0 + u + u * u * u * (-16.0 + u * (23.0 - 9.0 * u))
    }

    fn p1_deriv(u: f64) -> f64 {
        1.0 + u * u * (-48.0 + u * (92.0 - 45.0 * u))
    }

    pub fn psi1(s: f64) -> f64 {
        let a = s.abs();
        let sign = if s < 0.0 { -1.0 } else { 1.0 };
        if a >= 1.0 {
            0.0
        } else if a <= 0.5 {
            2.0 * s
        } else {
            sign * p1(2.0 * a - 1.0)
        }
    }

    pub fn psi1_deriv(s: f64) -> f64 {
        let a = s.abs();
        if a >= 1.0 {
            0.0
        } else if a <= 0.5 {
            2.0
        } else {
            2.0 * p1_deriv(2.0 * a - 1.0)
        }
    }

    pub fn psi2(s: f64) -> f64 {
        let a = s.abs();
        if a >= 1.0 {
            0.0
        } else if a <= 0.5 {
            1.0
        } else {
            h0(2.0 * a - 1.0)
        }
    }

    pub fn psi2_deriv(s: f64) -> f64 {
        let a = s.abs();
        let sign = if s < 0.0 { -1.0 } else { 1.0 };
        if a >= 1.0 || a <= 0.5 {
            0.0
        } else {
            sign * 2.0 * h0_deriv(2.0 * a - 1.0)
        }
    }

    /// `max |psi1|`, `max |psi1'|`, `max |psi2'|` over the support, computed
    /// on a fine grid once. Used for derivative bounds at validation time.
    pub fn profile_bounds() -> (f64, f64, f64) {
        let n = 20_000;
        let mut m1 = 0.0f64;
        let mut d1 = 0.0f64;
        let mut d2 = 0.0f64;
        for i in 0..=n {
            let s = -1.0 + 2.0 * i as f64 / n as f64;
            m1 = m1.max(psi1(s).abs());
            d1 = d1.max(psi1_deriv(s).abs());
            d2 = d2.max(psi2_deriv(s).abs());
        }
        (m1, d1, d2)
    }
}

/// Which frame the shear box and displacement are expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// Box axes along the coordinate axes, displacement vertical.
    Standard,
    /// Box axes along the eigendirections of the linear part, displacement
    /// along the slow (center) eigendirection.
    Eigenframe,
}

/// Parameters of the compactly supported shear.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub q: TorusPoint,
    pub a_box: f64,
    pub eps: f64,
    pub frame: Frame,
}

#[derive(Serialize, Deserialize)]
struct MapWire {
    kind: String,
    matrix: [i64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbation: Option<PerturbationWire>,
}

#[derive(Serialize, Deserialize)]
struct PerturbationWire {
    q: [f64; 2],
    a_box: f64,
    eps: f64,
    frame: Frame,
}

/// A torus endomorphism: an integer matrix, optionally precomposed with a
/// compactly supported shear.
///
/// Construction validates the non-invertibility requirement `|det| ≥ 2`,
/// that the shear support fits in a ball of radius less than half the
/// injectivity separation of the linear part, and that the shear keeps the
/// map a local diffeomorphism.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MapWire", into = "MapWire")]
pub struct MapSpec {
    matrix: [i64; 4],
    perturbation: Option<Perturbation>,
    // Cached derived data.
    mat: Mat2,
    degree: usize,
    branch_offsets: Vec<(f64, f64)>,
    tau_linear: f64,
    // Shear frame: columns (displacement-transverse, displacement) and the
    // inverse, plus the circumradius of the support box.
    frame_cols: (TangentVector, TangentVector),
    frame_inv: Mat2,
    support_radius: f64,
}

impl TryFrom<MapWire> for MapSpec {
    type Error = PhlabError;

    fn try_from(w: MapWire) -> Result<MapSpec> {
        let perturbation = match (w.kind.as_str(), w.perturbation) {
            ("linear", None) => None,
            ("perturbed-linear", Some(p)) => Some(Perturbation {
                q: TorusPoint::new(p.q[0], p.q[1]),
                a_box: p.a_box,
                eps: p.eps,
                frame: p.frame,
            }),
            ("linear", Some(_)) => {
                return Err(PhlabError::InvalidMap(
                    "kind \"linear\" must not carry a perturbation".into(),
                ))
            }
            ("perturbed-linear", None) => {
                return Err(PhlabError::InvalidMap(
                    "kind \"perturbed-linear\" requires a perturbation".into(),
                ))
            }
            (k, _) => {
                return Err(PhlabError::InvalidMap(format!(
                    "unknown map kind {k:?}; expected \"linear\" or \"perturbed-linear\""
                )))
            }
        };
        MapSpec::build(w.matrix, perturbation)
    }
}

impl From<MapSpec> for MapWire {
    fn from(m: MapSpec) -> MapWire {
        MapWire {
            kind: if m.perturbation.is_none() {
                "linear".into()
            } else {
                "perturbed-linear".into()
            },
            matrix: m.matrix,
            perturbation: m.perturbation.map(|p| PerturbationWire {
                q: [p.q.x(), p.q.y()],
                a_box: p.a_box,
                eps: p.eps,
                frame: p.frame,
            }),
        }
    }
}

/// Half-width of the default shear box: the square then fits in a ball of
/// radius `0.1` around its center.
pub const DEFAULT_BOX_HALF_WIDTH: f64 = 0.070_710_678_118_654_75;

impl MapSpec {
    pub fn linear(a: i64, b: i64, c: i64, d: i64) -> Result<MapSpec> {
        MapSpec::build([a, b, c, d], None)
    }

    pub fn perturbed(matrix: [i64; 4], perturbation: Perturbation) -> Result<MapSpec> {
        MapSpec::build(matrix, Some(perturbation))
    }

    /// The product of the expanding circle maps `x ↦ 3x` and `y ↦ 2y`:
    /// the reducible reference map with horizontal unstable and vertical
    /// center circles.
    pub fn product_expanding() -> MapSpec {
        MapSpec::linear(3, 0, 0, 2).expect("valid preset")
    }

    /// The map induced by the irreducible matrix `(3 1; 1 2)` with
    /// irrational eigenvalues `(5 ± √5)/2`.
    pub fn irreducible_expanding() -> MapSpec {
        MapSpec::linear(3, 1, 1, 2).expect("valid preset")
    }

    /// Shear perturbation of [`MapSpec::product_expanding`], supported in a
    /// box around `(2/3, 1/2)`, a preimage of the fixed point `(0, 0)`.
    /// Non-special for every `eps > 0`.
    pub fn sheared_product(eps: f64) -> MapSpec {
        MapSpec::perturbed(
            [3, 0, 0, 2],
            Perturbation {
                q: TorusPoint::new(2.0 / 3.0, 0.5),
                a_box: DEFAULT_BOX_HALF_WIDTH,
                eps,
                frame: Frame::Standard,
            },
        )
        .expect("valid preset")
    }

    /// Shear perturbation of [`MapSpec::irreducible_expanding`] in the
    /// eigenframe, supported around `(2/5, 4/5)`, a preimage of `(0, 0)`.
    pub fn sheared_irreducible(eps: f64) -> MapSpec {
        MapSpec::perturbed(
            [3, 1, 1, 2],
            Perturbation {
                q: TorusPoint::new(0.4, 0.8),
                a_box: DEFAULT_BOX_HALF_WIDTH,
                eps,
                frame: Frame::Eigenframe,
            },
        )
        .expect("valid preset")
    }

    fn build(matrix: [i64; 4], perturbation: Option<Perturbation>) -> Result<MapSpec> {
        let [a, b, c, d] = matrix;
        let det = a * d - b * c;
        if det.abs() < 2 {
            return Err(PhlabError::InvalidMap(format!(
                "matrix determinant is {det}; non-invertible endomorphisms require |det| >= 2"
            )));
        }
        let mat = Mat2::new(a as f64, b as f64, c as f64, d as f64);
        let degree = det.unsigned_abs() as usize;

        // Branch offsets: the |det| cosets of Z²/(matrix · Z²), realized as
        // the linear preimages of the origin. Deduplicated, then ordered
        // lexicographically for stable branch indexing.
        let inv = mat.inverse();
        let mut offsets: Vec<(f64, f64)> = Vec::new();
        let span = det.unsigned_abs() as i64;
        for i in 0..span {
            for j in 0..span {
                let v = inv.mul_vec(TangentVector::new(i as f64, j as f64));
                let p = TorusPoint::new(v.vx, v.vy);
                let dup = offsets.iter().any(|&(ox, oy)| {
                    torus_distance(p, TorusPoint::new(ox, oy)) < 1e-9
                });
                if !dup {
                    offsets.push((p.x(), p.y()));
                }
            }
        }
        if offsets.len() != degree {
            return Err(PhlabError::InvalidMap(format!(
                "found {} preimage classes, expected {degree}",
                offsets.len()
            )));
        }
        offsets.sort_by(|p, q| p.partial_cmp(q).unwrap());

        // Injectivity separation of the linear part: minimal torus distance
        // between distinct preimages, which for a linear map is the minimal
        // nonzero element of the preimage lattice.
        let mut tau_linear = f64::INFINITY;
        let zero = TorusPoint::new(0.0, 0.0);
        for (i, &(ox, oy)) in offsets.iter().enumerate() {
            let p = TorusPoint::new(ox, oy);
            if torus_distance(p, zero) > 1e-9 {
                tau_linear = tau_linear.min(torus_distance(p, zero));
            }
            for &(px, py) in &offsets[i + 1..] {
                tau_linear = tau_linear.min(torus_distance(p, TorusPoint::new(px, py)));
            }
        }

        let (frame_cols, frame_inv, support_radius) = match &perturbation {
            None => (
                (TangentVector::new(1.0, 0.0), TangentVector::new(0.0, 1.0)),
                Mat2::identity(),
                0.0,
            ),
            Some(p) => {
                if !(p.a_box > 0.0 && p.eps > 0.0) {
                    return Err(PhlabError::InvalidMap(
                        "perturbation requires a_box > 0 and eps > 0".into(),
                    ));
                }
                let (e1, e2) = match p.frame {
                    Frame::Standard => {
                        (TangentVector::new(1.0, 0.0), TangentVector::new(0.0, 1.0))
                    }
                    Frame::Eigenframe => {
                        let (fast, slow) = eigen_directions(mat).ok_or_else(|| {
                            PhlabError::InvalidMap(
                                "eigenframe shear needs real distinct eigenvalues".into(),
                            )
                        })?;
                        (fast.unit_vector(), slow.unit_vector())
                    }
                };
                let f = Mat2::new(e1.vx, e2.vx, e1.vy, e2.vy);
                let f_inv = f.inverse();
                let corner1 = TangentVector::new(e1.vx + e2.vx, e1.vy + e2.vy);
                let corner2 = TangentVector::new(e1.vx - e2.vx, e1.vy - e2.vy);
                let radius = p.a_box * corner1.norm().max(corner2.norm());
                if radius >= tau_linear / 2.0 {
                    return Err(PhlabError::InvalidMap(format!(
                        "shear support radius {radius:.4} must be below half the injectivity \
                         separation {:.4}",
                        tau_linear
                    )));
                }
                // Local diffeomorphism check: det Dφ = 1 + eps·psi1·psi2',
                // bounded below via the profile extrema.
                let (m1, _d1, d2) = bump::profile_bounds();
                if p.eps * m1 * d2 >= 1.0 - 1e-6 {
                    return Err(PhlabError::InvalidMap(format!(
                        "eps = {} makes the shear derivative nearly singular (eps·{:.3} ≈ 1)",
                        p.eps,
                        m1 * d2
                    )));
                }
                ((e1, e2), f_inv, radius)
            }
        };

        Ok(MapSpec {
            matrix,
            perturbation,
            mat,
            degree,
            branch_offsets: offsets,
            tau_linear,
            frame_cols,
            frame_inv,
            support_radius,
        })
    }

    pub fn matrix(&self) -> [i64; 4] {
        self.matrix
    }

    pub fn linear_mat(&self) -> Mat2 {
        self.mat
    }

    pub fn perturbation(&self) -> Option<&Perturbation> {
        self.perturbation.as_ref()
    }

    pub fn is_linear(&self) -> bool {
        self.perturbation.is_none()
    }

    /// Topological degree `|det|`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Injectivity separation of the linear part (minimal distance between
    /// distinct preimages of a common point).
    pub fn tau_linear(&self) -> f64 {
        self.tau_linear
    }

    /// Center of the shear support, if any.
    pub fn support_center(&self) -> Option<TorusPoint> {
        self.perturbation.as_ref().map(|p| p.q)
    }

    /// Radius of a ball around the support center containing the shear
    /// support. Zero for linear maps.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Box coordinates of `p` relative to the shear frame, scaled so the
    /// support is `[-1, 1]²`, or `None` for linear maps.
    fn box_coords(&self, p: TorusPoint) -> Option<(f64, f64)> {
        let pert = self.perturbation.as_ref()?;
        let (dx, dy) = p.delta_to(pert.q);
        let local = self.frame_inv.mul_vec(TangentVector::new(dx, dy));
        Some((local.vx / pert.a_box, local.vy / pert.a_box))
    }

    /// The shear displacement of `p` as a plane vector (zero off-support).
    fn shear_displacement(&self, p: TorusPoint) -> (f64, f64) {
        let Some(pert) = self.perturbation.as_ref() else {
            return (0.0, 0.0);
        };
        let Some((su, sc)) = self.box_coords(p) else {
            return (0.0, 0.0);
        };
        if su.abs() >= 1.0 || sc.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let amp = pert.eps * pert.a_box * bump::psi1(su) * bump::psi2(sc);
        let e2 = self.frame_cols.1;
        (amp * e2.vx, amp * e2.vy)
    }

    /// Apply the map.
    pub fn evaluate(&self, p: TorusPoint) -> TorusPoint {
        let (sx, sy) = self.shear_displacement(p);
        let w = self.mat.mul_vec(TangentVector::new(p.x() + sx, p.y() + sy));
        TorusPoint::new(w.vx, w.vy)
    }

    /// Lift of the map to the plane: continuous, commutes with integer
    /// translations.
    pub fn evaluate_lift(&self, x: f64, y: f64) -> (f64, f64) {
        let (sx, sy) = self.shear_displacement(TorusPoint::new(x, y));
        let w = self.mat.mul_vec(TangentVector::new(x + sx, y + sy));
        (w.vx, w.vy)
    }

    /// Jacobian at `p`.
    ///
    /// Validation at construction keeps the determinant uniformly away from
    /// zero, so this cannot fail for a constructed map; a debug assertion
    /// guards the invariant.
    pub fn derivative(&self, p: TorusPoint) -> Mat2 {
        let d_phi = match (self.perturbation.as_ref(), self.box_coords(p)) {
            (Some(pert), Some((su, sc))) if su.abs() < 1.0 && sc.abs() < 1.0 => {
                // Dφ = I + e2 · (∇η)ᵀ with η the displacement amplitude.
                let g1 = pert.eps * bump::psi1_deriv(su) * bump::psi2(sc);
                let g2 = pert.eps * bump::psi1(su) * bump::psi2_deriv(sc);
                // Gradient rows of the scaled box coordinates.
                let row_u = (self.frame_inv.a, self.frame_inv.b);
                let row_c = (self.frame_inv.c, self.frame_inv.d);
                let gx = g1 * row_u.0 + g2 * row_c.0;
                let gy = g1 * row_u.1 + g2 * row_c.1;
                let e2 = self.frame_cols.1;
                Mat2::new(
                    1.0 + e2.vx * gx,
                    e2.vx * gy,
                    e2.vy * gx,
                    1.0 + e2.vy * gy,
                )
            }
            _ => Mat2::identity(),
        };
        let jac = self.mat.mul_mat(d_phi);
        debug_assert!(jac.det().abs() > 1e-8, "degenerate Jacobian");
        jac
    }

    /// Jacobian of `f^n` along the forward orbit of `p`.
    pub fn derivative_power(&self, p: TorusPoint, n: usize) -> Mat2 {
        let mut acc = Mat2::identity();
        let mut z = p;
        for _ in 0..n {
            acc = self.derivative(z).mul_mat(acc);
            z = self.evaluate(z);
        }
        acc
    }

    /// All `|det|` preimages of `p`, ordered lexicographically.
    ///
    /// Linear maps use the closed form. Perturbed maps refine the linear
    /// branches by damped Newton iteration to residual `1e-12`.
    pub fn inverse_branches(&self, p: TorusPoint) -> Result<Vec<TorusPoint>> {
        let inv = self.mat.inverse();
        let base = inv.mul_vec(TangentVector::new(p.x(), p.y()));
        let mut out: Vec<TorusPoint> = self
            .branch_offsets
            .iter()
            .map(|&(ox, oy)| TorusPoint::new(base.vx + ox, base.vy + oy))
            .collect();

        if self.perturbation.is_some() {
            for (k, z) in out.iter_mut().enumerate() {
                *z = self.newton_refine(*z, p, k)?;
            }
        }
        out.sort_by(|u, v| (u.x(), u.y()).partial_cmp(&(v.x(), v.y())).unwrap());
        Ok(out)
    }

    fn newton_refine(&self, seed: TorusPoint, target: TorusPoint, branch: usize) -> Result<TorusPoint> {
        let mut z = seed;
        let residual = |z: TorusPoint| {
            let (rx, ry) = target.delta_to(self.evaluate(z));
            (rx, ry)
        };
        let (mut rx, mut ry) = residual(z);
        let mut rnorm = rx.hypot(ry);
        for _ in 0..50 {
            if rnorm <= 1e-13 {
                return Ok(z);
            }
            let step = self
                .derivative(z)
                .inverse()
                .mul_vec(TangentVector::new(rx, ry));
            let mut damp = 1.0;
            loop {
                let z_try = z.offset(damp * step.vx, damp * step.vy);
                let (tx, ty) = residual(z_try);
                let tnorm = tx.hypot(ty);
                if tnorm < rnorm || damp < 1.0 / 64.0 {
                    z = z_try;
                    rx = tx;
                    ry = ty;
                    rnorm = tnorm;
                    break;
                }
                damp *= 0.5;
            }
        }
        if rnorm <= 1e-12 {
            Ok(z)
        } else {
            Err(PhlabError::NewtonDiverged {
                branch,
                residual: rnorm,
            })
        }
    }
}

/// Eigendirections of a 2×2 matrix with real distinct eigenvalues, returned
/// as (fast, slow) by absolute eigenvalue.
pub fn eigen_directions(m: Mat2) -> Option<(Direction, Direction)> {
    let tr = m.a + m.d;
    let det = m.det();
    let disc = tr * tr - 4.0 * det;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let l1 = (tr + sq) / 2.0;
    let l2 = (tr - sq) / 2.0;
    let (fast, slow) = if l1.abs() >= l2.abs() { (l1, l2) } else { (l2, l1) };
    let dir_for = |lambda: f64| {
        // (m - λI) v = 0; pick the more stable row.
        let r1 = (m.a - lambda, m.b);
        let r2 = (m.c, m.d - lambda);
        let (p, q) = if r1.0.hypot(r1.1) >= r2.0.hypot(r2.1) {
            r1
        } else {
            r2
        };
        Direction::from_vector(-q, p)
    };
    Some((dir_for(fast), dir_for(slow)))
}

/// A constant cone of directions: everything within `half_width` of `center`
/// in projective angle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConeField {
    pub center: Direction,
    pub half_width: f64,
}

impl ConeField {
    pub fn new(center: Direction, half_width: f64) -> Result<ConeField> {
        if !(half_width > 0.0 && half_width < std::f64::consts::FRAC_PI_2) {
            return Err(PhlabError::InvalidParameter(format!(
                "cone half-width must lie in (0, π/2), got {half_width}"
            )));
        }
        Ok(ConeField { center, half_width })
    }

    /// Cone spanned by the slope interval `[s_lo, s_hi]`.
    pub fn from_slopes(s_lo: f64, s_hi: f64) -> Result<ConeField> {
        assert!(s_lo < s_hi);
        // Raw angles in (-π/2, π/2) keep the ordering; canonicalization
        // happens only on the center.
        let t_lo = s_lo.atan();
        let t_hi = s_hi.atan();
        ConeField::new(Direction::new((t_lo + t_hi) / 2.0), (t_hi - t_lo) / 2.0)
    }

    pub fn contains(&self, d: Direction) -> bool {
        crate::torus::angle_between(self.center, d) <= self.half_width
    }
}

/// Outcome of sampling-based cone certification.
///
/// `verified` means: at every sampled base point, `Df^ell` maps every sampled
/// cone direction strictly inside the cone with angular clearance at least
/// `margin`, and stretches it by at least `sigma > 1`. Sampling-based, not
/// interval-verified; `grid_n` records the resolution so failures reproduce.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConeCertificate {
    pub ell: usize,
    pub sigma: f64,
    pub grid_n: usize,
    pub margin: f64,
    pub verified: bool,
    /// Empirical injectivity separation of the linear part.
    pub tau: f64,
    /// Grid cell realizing the worst clearance.
    pub worst_cell: [usize; 2],
}

/// Number of directions sampled across the cone (boundaries included).
const CONE_DIRECTION_SAMPLES: usize = 9;

/// Certify the unstable cone condition by sampling a `grid_n × grid_n` lattice
/// of base points and a fan of directions across the cone.
pub fn certify_cones(
    map: &MapSpec,
    cone: &ConeField,
    ell: usize,
    grid_n: usize,
) -> Result<ConeCertificate> {
    use rayon::prelude::*;

    if grid_n < 16 {
        return Err(PhlabError::InvalidParameter(format!(
            "cone certification needs grid_n >= 16, got {grid_n}"
        )));
    }
    if ell == 0 {
        return Err(PhlabError::InvalidParameter("ell must be >= 1".into()));
    }

    let dirs: Vec<Direction> = (0..CONE_DIRECTION_SAMPLES)
        .map(|k| {
            let t = -cone.half_width
                + 2.0 * cone.half_width * k as f64 / (CONE_DIRECTION_SAMPLES - 1) as f64;
            Direction::new(cone.center.theta() + t)
        })
        .collect();

    struct Worst {
        sigma: f64,
        margin: f64,
        cell: [usize; 2],
    }

    let combine = |a: Worst, b: Worst| -> Worst {
        let cell = if a.margin < b.margin
            || (a.margin == b.margin && (a.cell[1], a.cell[0]) <= (b.cell[1], b.cell[0]))
        {
            a.cell
        } else {
            b.cell
        };
        Worst {
            sigma: a.sigma.min(b.sigma),
            margin: a.margin.min(b.margin),
            cell,
        }
    };

    let worst = (0..grid_n)
        .into_par_iter()
        .map(|j| {
            let mut acc = Worst {
                sigma: f64::INFINITY,
                margin: f64::INFINITY,
                cell: [0, j],
            };
            for i in 0..grid_n {
                let p = TorusPoint::new(i as f64 / grid_n as f64, j as f64 / grid_n as f64);
                let jac = map.derivative_power(p, ell);
                for d in &dirs {
                    let image = jac.mul_vec(d.unit_vector());
                    let stretch = image.norm();
                    let clearance =
                        cone.half_width - crate::torus::angle_between(image.direction(), cone.center);
                    let cand = Worst {
                        sigma: stretch,
                        margin: clearance,
                        cell: [i, j],
                    };
                    acc = combine(acc, cand);
                }
            }
            acc
        })
        .reduce(
            || Worst {
                sigma: f64::INFINITY,
                margin: f64::INFINITY,
                cell: [usize::MAX, usize::MAX],
            },
            combine,
        );

    Ok(ConeCertificate {
        ell,
        sigma: worst.sigma,
        grid_n,
        margin: worst.margin,
        verified: worst.margin > 0.0 && worst.sigma > 1.0,
        tau: map.tau_linear,
        worst_cell: worst.cell,
    })
}
