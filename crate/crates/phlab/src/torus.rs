//! Flat-torus arithmetic: points modulo 1, tangent vectors, projective
//! directions, and 2×2 linear algebra.
//!
//! The torus is `T² = R²/Z²` with the flat metric inherited from the plane.
//! Points live in the fundamental domain `[0,1)²`; distances use the minimum
//! image convention per axis. A [`Direction`] is a point of the projective
//! tangent line: an angle in `[0, π)` with `θ` and `θ + π` identified.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Default tolerance for projective direction comparisons.
pub const DIRECTION_TOL: f64 = 1e-9;

/// Reduce a real number into `[0, 1)`, mapping `-0.0` to `0.0`.
fn wrap1(x: f64) -> f64 {
    let mut r = x - x.floor();
    if r >= 1.0 {
        // Happens when x is a tiny negative number and x - floor(x) rounds
        // up to exactly 1.0.
        r = 0.0;
    }
    if r == 0.0 {
        r = 0.0; // normalizes -0.0
    }
    r
}

/// A point of the 2-torus, stored in the fundamental domain `[0,1)²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    x: f64,
    y: f64,
}

impl TorusPoint {
    /// Wrap arbitrary plane coordinates onto the torus.
    ///
    /// Panics on non-finite input; configuration layers validate before
    /// reaching this point.
    pub fn new(x: f64, y: f64) -> TorusPoint {
        assert!(
            x.is_finite() && y.is_finite(),
            "torus point requires finite coordinates, got ({x}, {y})"
        );
        TorusPoint {
            x: wrap1(x),
            y: wrap1(y),
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    /// Shortest representative of `self - other`, componentwise in `[-1/2, 1/2)`.
    pub fn delta_to(&self, other: TorusPoint) -> (f64, f64) {
        (signed_delta(other.x, self.x), signed_delta(other.y, self.y))
    }

    /// Translate by a plane vector (wrapping).
    pub fn offset(&self, dx: f64, dy: f64) -> TorusPoint {
        TorusPoint::new(self.x + dx, self.y + dy)
    }
}

/// Shortest signed representative of `b - a` on the circle, in `[-1/2, 1/2)`.
pub fn signed_delta(a: f64, b: f64) -> f64 {
    let d = b - a;
    let mut r = d - d.round();
    if r >= 0.5 {
        r -= 1.0;
    } else if r < -0.5 {
        r += 1.0;
    }
    r
}

/// Flat distance on the torus (minimum image convention).
pub fn torus_distance(p: TorusPoint, q: TorusPoint) -> f64 {
    let (dx, dy) = q.delta_to(p);
    dx.hypot(dy)
}

/// A tangent vector in the standard flat chart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub vx: f64,
    pub vy: f64,
}

impl TangentVector {
    pub fn new(vx: f64, vy: f64) -> TangentVector {
        TangentVector { vx, vy }
    }

    pub fn norm(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn normalized(&self) -> TangentVector {
        let n = self.norm();
        assert!(n > 0.0, "cannot normalize the zero vector");
        TangentVector::new(self.vx / n, self.vy / n)
    }

    pub fn direction(&self) -> Direction {
        Direction::from_vector(self.vx, self.vy)
    }

    pub fn scale(&self, t: f64) -> TangentVector {
        TangentVector::new(self.vx * t, self.vy * t)
    }

    pub fn dot(&self, other: TangentVector) -> f64 {
        self.vx * other.vx + self.vy * other.vy
    }
}

/// An element of the projective tangent line: an angle in `[0, π)`, with a
/// direction and its negation identified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    theta: f64,
}

impl Direction {
    /// Canonicalize an arbitrary angle into `[0, π)`.
    pub fn new(theta: f64) -> Direction {
        assert!(theta.is_finite());
        let mut t = theta % PI;
        if t < 0.0 {
            t += PI;
        }
        if t >= PI {
            t = 0.0;
        }
        Direction { theta: t }
    }

    pub fn from_vector(vx: f64, vy: f64) -> Direction {
        assert!(
            vx != 0.0 || vy != 0.0,
            "zero vector has no projective direction"
        );
        Direction::new(vy.atan2(vx))
    }

    /// Direction of the line `y = s·x`.
    pub fn from_slope(s: f64) -> Direction {
        Direction::new(s.atan())
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// A unit vector representing this direction (the lift with angle in
    /// `[0, π)`).
    pub fn unit_vector(&self) -> TangentVector {
        TangentVector::new(self.theta.cos(), self.theta.sin())
    }

    /// Slope `tan θ`; infinite for the vertical direction.
    pub fn slope(&self) -> f64 {
        self.theta.tan()
    }

    pub fn is_close(&self, other: Direction, tol: f64) -> bool {
        angle_between(*self, other) <= tol
    }
}

/// Projective angle between two directions, in `[0, π/2]`.
pub fn angle_between(a: Direction, b: Direction) -> f64 {
    let d = (a.theta - b.theta).abs();
    d.min(PI - d)
}

/// A 2×2 real matrix, row major: `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Mat2 {
        Mat2 { a, b, c, d }
    }

    pub fn identity() -> Mat2 {
        Mat2::new(1.0, 0.0, 0.0, 1.0)
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn mul_vec(&self, v: TangentVector) -> TangentVector {
        TangentVector::new(self.a * v.vx + self.b * v.vy, self.c * v.vx + self.d * v.vy)
    }

    pub fn mul_mat(&self, m: Mat2) -> Mat2 {
        Mat2::new(
            self.a * m.a + self.b * m.c,
            self.a * m.b + self.b * m.d,
            self.c * m.a + self.d * m.c,
            self.c * m.b + self.d * m.d,
        )
    }

    pub fn inverse(&self) -> Mat2 {
        let det = self.det();
        assert!(det.abs() > 1e-300, "singular 2x2 matrix");
        Mat2::new(self.d / det, -self.b / det, -self.c / det, self.a / det)
    }

    /// Columns as tangent vectors.
    pub fn columns(&self) -> (TangentVector, TangentVector) {
        (
            TangentVector::new(self.a, self.c),
            TangentVector::new(self.b, self.d),
        )
    }
}
