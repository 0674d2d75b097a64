//! The invariant splitting `E^u ⊕ E^c` and everything measured along it:
//! cocycle norms, Birkhoff center exponents, Lyapunov norms, and the
//! stopping times driving the coupled-configuration experiment.
//!
//! Directions are estimated by power iteration through the derivative
//! cocycle: pushing a generic direction forward along a past converges to
//! `E^u` (which depends on the past), pulling a generic direction backward
//! along the forward orbit converges to `E^c` (which does not). Both
//! converge at the domination rate, so forty steps put the error far below
//! the tolerances used here.

use serde::{Deserialize, Serialize};

use crate::error::{PhlabError, Result};
use crate::extension::PastWord;
use crate::maps::MapSpec;
use crate::torus::{angle_between, Direction, TangentVector, TorusPoint};

/// Fixed seed direction for unstable pushforward. Any direction transverse
/// to the center bundle works; keeping it fixed makes runs reproducible and
/// collapses the estimator variance for constant-derivative maps to zero.
const UNSTABLE_SEED: (f64, f64) = (1.0, 0.5);

/// Fixed seed for center pullback; must be transverse to `E^u`.
const CENTER_SEED: (f64, f64) = (0.5, 1.0);

/// Residual threshold above which a direction estimate is rejected.
const DIRECTION_RESIDUAL_TOL: f64 = 1e-6;

/// Default pullback depth used when a center direction is needed at a single
/// point (deep enough for `(λc/λu)^depth` to vanish at double precision for
/// every example family).
pub const DEFAULT_DIRECTION_DEPTH: usize = 40;

/// Estimated invariant splitting at a past, with convergence bookkeeping.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplittingEstimate {
    pub e_u: Direction,
    pub e_c: Direction,
    pub depth: usize,
    /// Projective change of `E^u` over the last deepening step.
    pub residual_u: f64,
    pub residual_c: f64,
}

fn push_direction(map: &MapSpec, w: &PastWord, start_depth: usize) -> Direction {
    let mut v = TangentVector::new(UNSTABLE_SEED.0, UNSTABLE_SEED.1);
    for k in (1..=start_depth).rev() {
        v = map.derivative(w.coordinate(k)).mul_vec(v).normalized();
    }
    v.direction()
}

/// The unstable direction attached to a past, by pushing a generic direction
/// forward from the deepest coordinate. Returns the direction and the
/// residual (projective change over the last deepening step).
pub fn unstable_direction(map: &MapSpec, w: &PastWord) -> Result<(Direction, f64)> {
    if w.depth() < 10 {
        return Err(PhlabError::InvalidParameter(format!(
            "unstable direction needs depth >= 10, got {}",
            w.depth()
        )));
    }
    let full = push_direction(map, w, w.depth());
    let shallower = push_direction(map, w, w.depth() - 1);
    let residual = angle_between(full, shallower);
    if residual > DIRECTION_RESIDUAL_TOL {
        return Err(PhlabError::DirectionUnstable {
            residual,
            depth: w.depth(),
        });
    }
    Ok((full, residual))
}

fn pull_direction(map: &MapSpec, orbit: &[TorusPoint], seed: TangentVector) -> Direction {
    let mut v = seed;
    for p in orbit.iter().rev() {
        v = map.derivative(*p).inverse().mul_vec(v).normalized();
    }
    v.direction()
}

/// Forward orbit `p, f(p), ..., f^{n-1}(p)` (length `n`).
pub fn forward_orbit(map: &MapSpec, p: TorusPoint, n: usize) -> Vec<TorusPoint> {
    let mut orbit = Vec::with_capacity(n);
    let mut z = p;
    for _ in 0..n {
        orbit.push(z);
        z = map.evaluate(z);
    }
    orbit
}

/// The center direction at `p`, by pulling a generic direction back along
/// the forward orbit with inverse Jacobians. Past-independent.
pub fn center_direction(map: &MapSpec, p: TorusPoint, depth: usize) -> Result<(Direction, f64)> {
    center_direction_seeded(
        map,
        p,
        depth,
        TangentVector::new(CENTER_SEED.0, CENTER_SEED.1),
    )
}

/// As [`center_direction`], with an explicit seed (any vector transverse to
/// `E^u` gives the same limit).
pub fn center_direction_seeded(
    map: &MapSpec,
    p: TorusPoint,
    depth: usize,
    seed: TangentVector,
) -> Result<(Direction, f64)> {
    if depth < 10 {
        return Err(PhlabError::InvalidParameter(format!(
            "center direction needs depth >= 10, got {depth}"
        )));
    }
    let orbit = forward_orbit(map, p, depth);
    let full = pull_direction(map, &orbit, seed);
    let shallower = pull_direction(map, &orbit[..depth - 1], seed);
    let residual = angle_between(full, shallower);
    if residual > DIRECTION_RESIDUAL_TOL {
        return Err(PhlabError::DirectionUnstable { residual, depth });
    }
    Ok((full, residual))
}

/// Center direction at `orbit[k]` computed from an already materialized
/// forward orbit; `orbit` must extend at least `depth` points past `k`.
fn center_direction_from_orbit(map: &MapSpec, orbit: &[TorusPoint], k: usize, depth: usize) -> Direction {
    pull_direction(
        map,
        &orbit[k..k + depth],
        TangentVector::new(CENTER_SEED.0, CENTER_SEED.1),
    )
}

/// Estimate both bundles at a past, with transversality check.
pub fn splitting_estimate(map: &MapSpec, w: &PastWord) -> Result<SplittingEstimate> {
    let (e_u, residual_u) = unstable_direction(map, w)?;
    let (e_c, residual_c) = center_direction(map, w.base(), w.depth())?;
    let angle = angle_between(e_u, e_c);
    if angle <= 1e-6 {
        return Err(PhlabError::DirectionUnstable {
            residual: angle,
            depth: w.depth(),
        });
    }
    Ok(SplittingEstimate {
        e_u,
        e_c,
        depth: w.depth(),
        residual_u,
        residual_c,
    })
}

/// Per-step stretch of the center bundle at `p`: `|Df(p) e^c(p)|`.
pub fn center_stretch(map: &MapSpec, p: TorusPoint, depth: usize) -> Result<f64> {
    let (e_c, _) = center_direction(map, p, depth)?;
    Ok(map.derivative(p).mul_vec(e_c.unit_vector()).norm())
}

/// Per-step stretch of the unstable bundle attached to a past.
pub fn unstable_stretch(map: &MapSpec, w: &PastWord) -> Result<f64> {
    let (e_u, _) = unstable_direction(map, w)?;
    Ok(map.derivative(w.base()).mul_vec(e_u.unit_vector()).norm())
}

/// `λ^u(n)` along the forward orbit of a past: the norm of `Df^n` restricted
/// to the unstable line, as a product of per-step stretches of unit vectors.
pub fn cocycle_norm_u(map: &MapSpec, w: &PastWord, n: usize) -> Result<f64> {
    let (e_u, _) = unstable_direction(map, w)?;
    let mut v = e_u.unit_vector();
    let mut z = w.base();
    let mut product = 1.0;
    for _ in 0..n {
        let image = map.derivative(z).mul_vec(v);
        let s = image.norm();
        product *= s;
        v = image.scale(1.0 / s);
        z = map.evaluate(z);
    }
    Ok(product)
}

/// `λ^c(n)` along the forward orbit of `p`, recomputing the center direction
/// at every orbit point (the center line is repelling under pushforward, so
/// a pushed vector cannot be trusted over long orbits).
pub fn cocycle_norm_c(map: &MapSpec, p: TorusPoint, n: usize, depth: usize) -> Result<f64> {
    Ok(center_stretches(map, p, n, depth)?.iter().product())
}

/// The per-step center stretches along the orbit `p, ..., f^{n-1}(p)`.
pub fn center_stretches(map: &MapSpec, p: TorusPoint, n: usize, depth: usize) -> Result<Vec<f64>> {
    if depth < 10 {
        return Err(PhlabError::InvalidParameter(
            "center stretches need depth >= 10".into(),
        ));
    }
    let orbit = forward_orbit(map, p, n + depth);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let e_c = center_direction_from_orbit(map, &orbit, k, depth);
        out.push(map.derivative(orbit[k]).mul_vec(e_c.unit_vector()).norm());
    }
    Ok(out)
}

/// A Birkhoff estimate with batch-means error bar.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ExponentEstimate {
    /// Nats per iterate.
    pub value: f64,
    /// Orbit length.
    pub n: usize,
    /// Batch-means standard error (10 batches).
    pub stderr: f64,
}

const EXPONENT_BATCHES: usize = 10;

fn batch_means_estimate(samples: &[f64]) -> ExponentEstimate {
    let n = samples.len();
    let value = samples.iter().sum::<f64>() / n as f64;
    let batch = n / EXPONENT_BATCHES;
    let means: Vec<f64> = (0..EXPONENT_BATCHES)
        .map(|b| samples[b * batch..(b + 1) * batch].iter().sum::<f64>() / batch as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / EXPONENT_BATCHES as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>()
        / (EXPONENT_BATCHES as f64 - 1.0);
    ExponentEstimate {
        value,
        n,
        stderr: (var / EXPONENT_BATCHES as f64).sqrt(),
    }
}

/// Birkhoff average of `log |Df|_{E^c}|` along the orbit of `start`.
pub fn center_exponent(map: &MapSpec, start: TorusPoint, n: usize) -> Result<ExponentEstimate> {
    center_exponent_depth(map, start, n, DEFAULT_DIRECTION_DEPTH)
}

/// As [`center_exponent`], with an explicit pullback depth for the center
/// direction (deeper pullback pushes the direction floor below double
/// precision for slowly dominated maps).
pub fn center_exponent_depth(
    map: &MapSpec,
    start: TorusPoint,
    n: usize,
    depth: usize,
) -> Result<ExponentEstimate> {
    if n < 1000 {
        return Err(PhlabError::InvalidParameter(format!(
            "center exponent needs n >= 1000, got {n}"
        )));
    }
    let stretches = center_stretches(map, start, n, depth)?;
    let logs: Vec<f64> = stretches.iter().map(|s| s.ln()).collect();
    Ok(batch_means_estimate(&logs))
}

/// Birkhoff average of `log |Df|_{E^u}|` along the orbit of a past (the
/// unstable line is pushed forward, self-correcting).
pub fn unstable_exponent(map: &MapSpec, w: &PastWord, n: usize) -> Result<ExponentEstimate> {
    if n < 1000 {
        return Err(PhlabError::InvalidParameter(format!(
            "unstable exponent needs n >= 1000, got {n}"
        )));
    }
    let (e_u, _) = unstable_direction(map, w)?;
    let mut v = e_u.unit_vector();
    let mut z = w.base();
    let mut logs = Vec::with_capacity(n);
    for _ in 0..n {
        let image = map.derivative(z).mul_vec(v);
        let s = image.norm();
        logs.push(s.ln());
        v = image.scale(1.0 / s);
        z = map.evaluate(z);
    }
    Ok(batch_means_estimate(&logs))
}

/// Parameters of the truncated Lyapunov norm
/// `‖v‖_L² = Σ_{k=-K..0} ‖Df^k v‖² e^{-2kλ}` with `0 < λ < L^c`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LyapunovNormParams {
    pub lambda: f64,
    pub truncation_k: usize,
}

impl LyapunovNormParams {
    /// Checked constructor: requires `0 < lambda < center_exponent`.
    pub fn new(lambda: f64, truncation_k: usize, center_exponent: f64) -> Result<LyapunovNormParams> {
        if !(lambda > 0.0 && lambda < center_exponent) {
            return Err(PhlabError::InvalidParameter(format!(
                "lambda must lie in (0, L^c) = (0, {center_exponent}), got {lambda}"
            )));
        }
        Ok(LyapunovNormParams {
            lambda,
            truncation_k,
        })
    }

    /// Default choice for a map: `λ = L^c / 2` with truncation 40, the
    /// exponent estimated on a short fixed orbit.
    pub fn default_for(map: &MapSpec) -> Result<LyapunovNormParams> {
        let est = center_exponent(map, TorusPoint::new(0.1234, 0.3456), 20_000)?;
        LyapunovNormParams::new(est.value / 2.0, 40, est.value)
    }
}

/// A Lyapunov norm evaluation with its truncation-error proxy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LyapunovNormValue {
    pub value: f64,
    /// Magnitude of the last term relative to the squared total.
    pub tail_fraction: f64,
}

/// Maximal tolerated relative weight of the deepest series term.
const LYAPUNOV_TAIL_TOL: f64 = 1e-3;

fn lyapunov_norm_core(
    map: &MapSpec,
    coordinate: &dyn Fn(usize) -> TorusPoint,
    available_depth: usize,
    v: TangentVector,
    params: &LyapunovNormParams,
) -> Result<LyapunovNormValue> {
    if params.truncation_k > available_depth {
        return Err(PhlabError::InvalidParameter(format!(
            "truncation {} exceeds available past depth {}",
            params.truncation_k, available_depth
        )));
    }
    let mut sum = 0.0;
    let mut last = 0.0;
    let mut vec = v;
    for j in 0..=params.truncation_k {
        if j > 0 {
            vec = map.derivative(coordinate(j)).inverse().mul_vec(vec);
        }
        last = vec.norm().powi(2) * (2.0 * j as f64 * params.lambda).exp();
        sum += last;
    }
    let tail_fraction = last / sum;
    if tail_fraction > LYAPUNOV_TAIL_TOL {
        return Err(PhlabError::LyapunovNotConverged {
            fraction: tail_fraction,
        });
    }
    Ok(LyapunovNormValue {
        value: sum.sqrt(),
        tail_fraction,
    })
}

/// The truncated Lyapunov norm of `v` (a vector in the center line) at the
/// past `w`.
pub fn lyapunov_norm(
    map: &MapSpec,
    w: &PastWord,
    v: TangentVector,
    params: &LyapunovNormParams,
) -> Result<LyapunovNormValue> {
    lyapunov_norm_core(map, &|k| w.coordinate(k), w.depth(), v, params)
}

/// Incremental evaluator for `λ̂^c(n)` along a forward orbit: the Lyapunov
/// cocycle `‖Df^n v‖_{L, x̃_n} / ‖v‖_{L, x̃}`, kept in log space.
struct HatLambda<'a> {
    map: &'a MapSpec,
    params: LyapunovNormParams,
    /// Backward coordinates of the current point: `back[0]` is the current
    /// base, `back[k]` is `x_{-k}`.
    back: Vec<TorusPoint>,
    /// Forward orbit buffer from the starting base.
    orbit: Vec<TorusPoint>,
    /// Σ log center stretch over steps taken so far.
    log_stretch: f64,
    log_l0: f64,
    steps: usize,
}

impl<'a> HatLambda<'a> {
    fn new(map: &'a MapSpec, w: &PastWord, params: LyapunovNormParams) -> Result<HatLambda<'a>> {
        let back: Vec<TorusPoint> = (0..=w.depth()).map(|k| w.coordinate(k)).collect();
        let mut me = HatLambda {
            map,
            params,
            back,
            orbit: vec![w.base()],
            log_stretch: 0.0,
            log_l0: 0.0,
            steps: 0,
        };
        me.log_l0 = me.log_norm_at_current()?;
        Ok(me)
    }

    fn ensure_orbit(&mut self, upto: usize) {
        while self.orbit.len() <= upto {
            let last = *self.orbit.last().unwrap();
            self.orbit.push(self.map.evaluate(last));
        }
    }

    fn center_dir_at_current(&mut self) -> Direction {
        let k = self.steps;
        self.ensure_orbit(k + DEFAULT_DIRECTION_DEPTH);
        center_direction_from_orbit(self.map, &self.orbit, k, DEFAULT_DIRECTION_DEPTH)
    }

    fn log_norm_at_current(&mut self) -> Result<f64> {
        let e_c = self.center_dir_at_current();
        let back = std::mem::take(&mut self.back);
        let val = lyapunov_norm_core(
            self.map,
            &|k| back[k],
            back.len() - 1,
            e_c.unit_vector(),
            &self.params,
        );
        self.back = back;
        Ok(val?.value.ln())
    }

    /// log λ̂(current step count).
    fn log_hat(&mut self) -> Result<f64> {
        Ok(self.log_stretch + self.log_norm_at_current()? - self.log_l0)
    }

    /// Advance one step along the orbit.
    fn step(&mut self) -> Result<()> {
        let e_c = self.center_dir_at_current();
        let here = self.orbit[self.steps];
        let stretch = self
            .map
            .derivative(here)
            .mul_vec(e_c.unit_vector())
            .norm();
        self.log_stretch += stretch.ln();
        self.steps += 1;
        self.ensure_orbit(self.steps);
        self.back.insert(0, self.orbit[self.steps]);
        Ok(())
    }
}

/// `λ̂^c(n)` at a past: the ratio of Lyapunov norms of `Df^n v` and `v` for
/// `v` in the center line.
pub fn lyapunov_cocycle(
    map: &MapSpec,
    w: &PastWord,
    n: usize,
    params: &LyapunovNormParams,
) -> Result<f64> {
    let mut hat = HatLambda::new(map, w, *params)?;
    for _ in 0..n {
        hat.step()?;
    }
    Ok(hat.log_hat()?.exp())
}

/// Record of a stopping-time computation.
///
/// `tau` is the first `k` with
/// `λ̂^c_{x̃^u}(k) · λ^c_{x̃_{-ℓ}}(ℓ) / λ^u_{x̃_{-ℓ}}(ℓ) ≥ ε`, and `t` is the
/// first `n` with `λ̂^c_{x̃}(n) / λ̂^c_{x̃^u}(τ) ≥ 1`. The defining
/// inequalities hold at `tau`/`t` and fail at `tau - 1`/`t - 1` by
/// construction of the linear scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoppingTimeRecord {
    pub tau: usize,
    pub t: usize,
    pub epsilon: f64,
    pub ell: usize,
    /// `λ̂^c_{x̃^u}(k)` for `k = 0..=tau`.
    pub lyapunov_trace: Vec<f64>,
}

/// Cap on the stopping-time scan, converting runaway scans into errors.
pub const STOPPING_TIME_CAP: usize = 10_000;

/// Compute the stopping times `τ` and `t` for a base past `x_word` and a
/// point `x_u` on its unstable leaf.
pub fn stopping_times(
    map: &MapSpec,
    x_word: &PastWord,
    x_u: TorusPoint,
    epsilon: f64,
    ell: usize,
    params: &LyapunovNormParams,
) -> Result<StoppingTimeRecord> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(PhlabError::InvalidParameter(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if ell + 10 > x_word.depth() {
        return Err(PhlabError::InvalidParameter(format!(
            "ell = {ell} needs word depth at least ell + 10, got {}",
            x_word.depth()
        )));
    }
    // The contraction ratio λ^c(ℓ)/λ^u(ℓ) measured at the depth-ℓ point.
    let deep = x_word.truncate_front(ell);
    let lambda_c_ell = cocycle_norm_c(map, deep.base(), ell, DEFAULT_DIRECTION_DEPTH)?;
    let lambda_u_ell = cocycle_norm_u(map, &deep, ell)?;
    let log_ratio = lambda_c_ell.ln() - lambda_u_ell.ln();

    // λ̂ cocycle along the orbit of x̃^u.
    let xu_word = x_word.parallel_past(map, x_u)?;
    let mut hat_u = HatLambda::new(map, &xu_word, *params)?;
    let mut trace = Vec::new();
    let log_eps = epsilon.ln();
    let tau = loop {
        let log_hat = hat_u.log_hat()?;
        trace.push(log_hat.exp());
        if log_hat + log_ratio >= log_eps {
            break hat_u.steps;
        }
        if hat_u.steps >= STOPPING_TIME_CAP {
            return Err(PhlabError::StoppingTimeCap {
                cap: STOPPING_TIME_CAP,
            });
        }
        hat_u.step()?;
    };
    let hat_at_tau = *trace.last().unwrap();
    let log_threshold = hat_at_tau.ln();

    let mut hat_x = HatLambda::new(map, x_word, *params)?;
    let t = loop {
        if hat_x.log_hat()? >= log_threshold {
            break hat_x.steps;
        }
        if hat_x.steps >= STOPPING_TIME_CAP {
            return Err(PhlabError::StoppingTimeCap {
                cap: STOPPING_TIME_CAP,
            });
        }
        hat_x.step()?;
    };

    Ok(StoppingTimeRecord {
        tau,
        t,
        epsilon,
        ell,
        lyapunov_trace: trace,
    })
}

/// Bounded-distortion probe: the running supremum over `m ≤ n` of the
/// partial Birkhoff differences
/// `|Σ_{l=0}^{m-1} φ(f̃^{-l} x̃) - φ(f̃^{-l} ỹ)|` for
/// `φ = log ‖Df|_{E^c}‖`, along the backward orbits of two pasts.
pub fn holder_distortion_probe(
    map: &MapSpec,
    w1: &PastWord,
    w2: &PastWord,
    n: usize,
) -> Result<f64> {
    if n > w1.depth() || n > w2.depth() {
        return Err(PhlabError::InvalidParameter(format!(
            "probe length {n} exceeds word depths ({}, {})",
            w1.depth(),
            w2.depth()
        )));
    }
    let mut sup = 0.0f64;
    let mut partial = 0.0;
    for l in 0..n {
        let a = center_stretch(map, w1.coordinate(l), DEFAULT_DIRECTION_DEPTH)?;
        let b = center_stretch(map, w2.coordinate(l), DEFAULT_DIRECTION_DEPTH)?;
        partial += a.ln() - b.ln();
        sup = sup.max(partial.abs());
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extension::{extend_past, fiber_sample, Chooser};
    use crate::maps::MapSpec;
    use crate::rng::SplitMix64;

    fn golden_u_slope() -> f64 {
        (5f64.sqrt() - 1.0) / 2.0
    }

    fn golden_c_slope() -> f64 {
        -(1.0 + 5f64.sqrt()) / 2.0
    }

    fn lambda_c_b() -> f64 {
        (5.0 - 5f64.sqrt()) / 2.0
    }

    fn random_word(map: &MapSpec, p: TorusPoint, depth: usize, seed: u64) -> PastWord {
        let mut rng = SplitMix64::new(seed);
        extend_past(map, p, &mut Chooser::Uniform(&mut rng), depth).unwrap()
    }

    #[test]
    fn unstable_direction_matches_eigenvectors() {
        let fb = MapSpec::irreducible_expanding();
        let w = random_word(&fb, TorusPoint::new(0.3, 0.8), 40, 1);
        let (e_u, _) = unstable_direction(&fb, &w).unwrap();
        assert!(
            (e_u.slope() - golden_u_slope()).abs() < 1e-9,
            "slope {}",
            e_u.slope()
        );

        let fa = MapSpec::product_expanding();
        let w = random_word(&fa, TorusPoint::new(0.3, 0.8), 40, 2);
        let (e_u, _) = unstable_direction(&fa, &w).unwrap();
        assert!(angle_between(e_u, Direction::new(0.0)) < 1e-6);
    }

    #[test]
    fn unstable_direction_is_equivariant() {
        let f = MapSpec::sheared_irreducible(0.01);
        let w = random_word(&f, TorusPoint::new(0.21, 0.43), 45, 3);
        let (e_u, _) = unstable_direction(&f, &w).unwrap();
        let shifted = crate::extension::shift(&f, &w).unwrap();
        let (e_u_next, _) = unstable_direction(&f, &shifted).unwrap();
        let pushed = f.derivative(w.base()).mul_vec(e_u.unit_vector());
        assert!(angle_between(pushed.direction(), e_u_next) < 1e-8);
    }

    #[test]
    fn center_direction_matches_eigenvectors_and_ignores_seed() {
        let fb = MapSpec::irreducible_expanding();
        let p = TorusPoint::new(0.47, 0.11);
        let (e_c, _) = center_direction(&fb, p, 40).unwrap();
        assert!((e_c.slope() - golden_c_slope()).abs() < 1e-9);

        // The product family converges at (2/3)^depth: about 1e-7 at 40.
        let fa = MapSpec::product_expanding();
        let (e_c, _) = center_direction(&fa, p, 40).unwrap();
        assert!(angle_between(e_c, Direction::new(std::f64::consts::FRAC_PI_2)) < 1e-6);
        let (e_c, _) = center_direction(&fa, p, 90).unwrap();
        assert!(angle_between(e_c, Direction::new(std::f64::consts::FRAC_PI_2)) < 1e-12);

        // Seed independence.
        let mut rng = SplitMix64::new(4);
        let f = MapSpec::sheared_irreducible(0.01);
        let (base, _) = center_direction(&f, p, 40).unwrap();
        for _ in 0..2 {
            let seed = TangentVector::new(rng.next_range(-1.0, 1.0), rng.next_range(-1.0, 1.0));
            let (d, _) = center_direction_seeded(&f, p, 40, seed).unwrap();
            assert!(angle_between(base, d) < 1e-9);
        }
    }

    #[test]
    fn sheared_maps_keep_the_linear_center_field() {
        // The shear displaces along the center eigendirection, so the center
        // bundle of the perturbed map is the constant linear one.
        let f = MapSpec::sheared_product(0.01);
        let q = f.support_center().unwrap();
        for p in [q, q.offset(0.03, 0.02), TorusPoint::new(0.9, 0.1)] {
            let (e_c, _) = center_direction(&f, p, 40).unwrap();
            assert!(angle_between(e_c, Direction::new(std::f64::consts::FRAC_PI_2)) < 1e-6);
        }
        let g = MapSpec::sheared_irreducible(0.01);
        let q = g.support_center().unwrap();
        for p in [q, q.offset(0.02, -0.03), TorusPoint::new(0.65, 0.25)] {
            let (e_c, _) = center_direction(&g, p, 40).unwrap();
            assert!((e_c.slope() - golden_c_slope()).abs() < 1e-8);
        }
    }

    #[test]
    fn center_past_independence_via_deep_transport() {
        // E^c at the depth-10 coordinate of each past, transported forward
        // by the derivative cocycle along that past's own last ten steps:
        // equivariance brings every past to the same line at the base. The
        // transport leg is kept short because the center line is repelling
        // under pushforward.
        let f = MapSpec::sheared_irreducible(0.01);
        let p = TorusPoint::new(0.37, 0.66);
        let sample = fiber_sample(&f, p, 40, 20, 9).unwrap();
        let leg = 10;
        let mut dirs = Vec::new();
        for w in &sample.words {
            let (deep_dir, _) = center_direction(&f, w.coordinate(leg), 40).unwrap();
            let mut v = deep_dir.unit_vector();
            for k in (1..=leg).rev() {
                v = f.derivative(w.coordinate(k)).mul_vec(v).normalized();
            }
            dirs.push(v.direction());
        }
        for d in &dirs[1..] {
            assert!(angle_between(dirs[0], *d) < 1e-9);
        }
    }

    #[test]
    fn splitting_has_domination_along_orbits() {
        for map in [
            MapSpec::product_expanding(),
            MapSpec::irreducible_expanding(),
            MapSpec::sheared_product(0.01),
            MapSpec::sheared_irreducible(0.01),
        ] {
            let w = random_word(&map, TorusPoint::new(0.13, 0.57), 45, 11);
            let mut word = w;
            for _ in 0..12 {
                let lc = center_stretch(&map, word.base(), 40).unwrap();
                let lu = unstable_stretch(&map, &word).unwrap();
                assert!(lc < lu, "domination violated: {lc} >= {lu}");
                assert!(lu > 1.0);
                word = crate::extension::shift(&map, &word).unwrap();
            }
        }
    }

    #[test]
    fn cocycle_norms_on_linear_maps() {
        let fa = MapSpec::product_expanding();
        let w = random_word(&fa, TorusPoint::new(0.41, 0.77), 40, 5);
        let lu = cocycle_norm_u(&fa, &w, 7).unwrap();
        assert!((lu - 3f64.powi(7)).abs() / 3f64.powi(7) < 1e-12);
        let lc = cocycle_norm_c(&fa, w.base(), 7, 40).unwrap();
        assert!((lc - 2f64.powi(7)).abs() / 2f64.powi(7) < 1e-12);

        let fb = MapSpec::irreducible_expanding();
        let lc = cocycle_norm_c(&fb, TorusPoint::new(0.2, 0.6), 10, 40).unwrap();
        let expect = lambda_c_b().powi(10);
        assert!(
            (lc - expect).abs() / expect < 1e-6,
            "λ^c(10) = {lc}, expected {expect}"
        );
        assert!((expect - 25.4).abs() < 0.1);
    }

    #[test]
    fn cocycle_multiplicativity() {
        let f = MapSpec::sheared_irreducible(0.01);
        let p = TorusPoint::new(0.18, 0.92);
        let total = cocycle_norm_c(&f, p, 15, 40).unwrap();
        let first = cocycle_norm_c(&f, p, 6, 40).unwrap();
        let orbit = forward_orbit(&f, p, 7);
        let second = cocycle_norm_c(&f, orbit[6], 9, 40).unwrap();
        assert!((total - first * second).abs() / total < 1e-10);
    }

    #[test]
    fn center_exponents_of_example_maps() {
        // Constant integrand: every orbit point yields the identical stretch
        // estimate, so the batch variance vanishes exactly and the value
        // sits on log 2 up to the direction estimator's 1e-7 floor squared.
        let fa = MapSpec::product_expanding();
        let est = center_exponent(&fa, TorusPoint::new(0.3, 0.4), 2000).unwrap();
        assert!((est.value - 2f64.ln()).abs() < 1e-12);
        assert_eq!(est.stderr, 0.0);

        let fb = MapSpec::irreducible_expanding();
        let est = center_exponent(&fb, TorusPoint::new(0.3, 0.4), 2000).unwrap();
        assert!((est.value - lambda_c_b().ln()).abs() < 1e-9);
    }

    #[test]
    fn exponent_coherence_with_volume() {
        // center + unstable exponent ≈ average log |det Df|.
        let f = MapSpec::sheared_irreducible(0.01);
        let start = TorusPoint::new(0.29, 0.53);
        let n = 20_000;
        let w = random_word(&f, start, 40, 21);
        let lc = center_exponent(&f, start, n).unwrap();
        let lu = unstable_exponent(&f, &w, n).unwrap();
        let orbit = forward_orbit(&f, start, n);
        let logdet =
            orbit.iter().map(|p| f.derivative(*p).det().abs().ln()).sum::<f64>() / n as f64;
        let err = (lc.value + lu.value - logdet).abs();
        let band = 2.0 * (lc.stderr + lu.stderr) + 1e-9;
        assert!(err <= band.max(1e-6), "coherence off by {err}, band {band}");
    }

    #[test]
    fn lyapunov_norm_geometric_series() {
        // Constant cocycle: the ratio ‖v‖_L / ‖v‖ is a geometric series.
        let fb = MapSpec::irreducible_expanding();
        let w = random_word(&fb, TorusPoint::new(0.7, 0.3), 70, 6);
        let lam = lambda_c_b();
        let params = LyapunovNormParams::new(0.5 * lam.ln(), 60, lam.ln()).unwrap();
        let (e_c, _) = center_direction(&fb, w.base(), 40).unwrap();
        let val = lyapunov_norm(&fb, &w, e_c.unit_vector(), &params).unwrap();
        let expect = (lam / (lam - 1.0)).sqrt();
        assert!(
            (val.value - expect).abs() < 1e-6,
            "ratio {} expected {expect}",
            val.value
        );
        assert!((expect - 1.9021).abs() < 1e-4);

        // Product map with λ = ½ log 2: ratio → √2.
        let fa = MapSpec::product_expanding();
        let w = random_word(&fa, TorusPoint::new(0.2, 0.9), 70, 7);
        let params = LyapunovNormParams::new(0.5 * 2f64.ln(), 60, 2f64.ln()).unwrap();
        let val = lyapunov_norm(&fa, &w, TangentVector::new(0.0, 1.0), &params).unwrap();
        assert!((val.value - 2f64.sqrt()).abs() < 1e-6);

        // The k = 0 term alone already gives ‖v‖ ≤ ‖v‖_L.
        assert!(val.value >= 1.0);
    }

    #[test]
    fn lyapunov_norm_rejects_slow_series() {
        // λ too close to L^c: the tail does not decay fast enough for the
        // truncation guard.
        let fb = MapSpec::irreducible_expanding();
        let w = random_word(&fb, TorusPoint::new(0.7, 0.3), 45, 8);
        let lam = lambda_c_b().ln();
        let params = LyapunovNormParams::new(lam * 0.999, 40, lam).unwrap();
        let (e_c, _) = center_direction(&fb, w.base(), 40).unwrap();
        assert!(matches!(
            lyapunov_norm(&fb, &w, e_c.unit_vector(), &params),
            Err(PhlabError::LyapunovNotConverged { .. })
        ));
    }

    #[test]
    fn lyapunov_cocycle_constant_case_and_identity() {
        let fb = MapSpec::irreducible_expanding();
        let w = random_word(&fb, TorusPoint::new(0.55, 0.15), 60, 9);
        let params = LyapunovNormParams::new(0.5 * lambda_c_b().ln(), 40, lambda_c_b().ln()).unwrap();
        let hat = lyapunov_cocycle(&fb, &w, 8, &params).unwrap();
        let expect = lambda_c_b().powi(8);
        assert!((hat - expect).abs() / expect < 1e-10);

        // Cocycle identity on the sheared map.
        let f = MapSpec::sheared_irreducible(0.01);
        let w = random_word(&f, TorusPoint::new(0.81, 0.37), 60, 10);
        let params = LyapunovNormParams::default_for(&f).unwrap();
        let total = lyapunov_cocycle(&f, &w, 13, &params).unwrap();
        let first = lyapunov_cocycle(&f, &w, 5, &params).unwrap();
        let shifted = crate::extension::shift_n(&f, &w, 5).unwrap();
        let second = lyapunov_cocycle(&f, &shifted, 8, &params).unwrap();
        assert!(
            (total - first * second).abs() / total < 1e-10,
            "identity violated: {total} vs {}",
            first * second
        );
    }

    #[test]
    fn lyapunov_growth_lower_bound() {
        let f = MapSpec::sheared_irreducible(0.01);
        let w = random_word(&f, TorusPoint::new(0.91, 0.05), 60, 12);
        let params = LyapunovNormParams::default_for(&f).unwrap();
        for n in [1usize, 5, 20, 50] {
            let hat = lyapunov_cocycle(&f, &w, n, &params).unwrap();
            assert!(
                hat.ln() >= n as f64 * params.lambda - 1e-9,
                "growth bound fails at n = {n}: log λ̂ = {} < nλ = {}",
                hat.ln(),
                n as f64 * params.lambda
            );
        }
    }

    /// Independent oracle: for a constant cocycle the stopping time is the
    /// first k with λ_c^k (λ_c/λ_u)^ℓ ≥ ε, found by direct scan.
    fn constant_cocycle_tau(lam_c: f64, lam_u: f64, ell: usize, eps: f64) -> usize {
        let d = (lam_c / lam_u).powi(ell as i32);
        let mut k = 0;
        loop {
            if lam_c.powi(k as i32) * d >= eps {
                return k;
            }
            k += 1;
            assert!(k < 10_000);
        }
    }

    #[test]
    fn stopping_times_constant_cocycles() {
        // Frozen expectations from the scan oracle:
        //   irreducible map, ε = 0.01, ℓ = 20 → τ = 46;
        //   product map, ε = 0.01, ℓ = 20 → τ = 6; and t = τ for constant
        // cocycles.
        assert_eq!(
            constant_cocycle_tau(lambda_c_b(), (5.0 + 5f64.sqrt()) / 2.0, 20, 0.01),
            46
        );
        assert_eq!(constant_cocycle_tau(2.0, 3.0, 20, 0.01), 6);

        let fb = MapSpec::irreducible_expanding();
        let w = random_word(&fb, TorusPoint::new(0.23, 0.71), 60, 13);
        let params = LyapunovNormParams::new(0.5 * lambda_c_b().ln(), 40, lambda_c_b().ln()).unwrap();
        let x_u = w.base().offset(0.3, 0.3 * golden_u_slope());
        let rec = stopping_times(&fb, &w, x_u, 0.01, 20, &params).unwrap();
        assert_eq!(rec.tau, 46);
        assert_eq!(rec.t, 46);
        // Defining inequality holds at τ and fails at τ - 1.
        let d = (lambda_c_b() / ((5.0 + 5f64.sqrt()) / 2.0)).powi(20);
        assert!(rec.lyapunov_trace[rec.tau] * d >= 0.01);
        assert!(rec.lyapunov_trace[rec.tau - 1] * d < 0.01);

        let fa = MapSpec::product_expanding();
        let w = random_word(&fa, TorusPoint::new(0.23, 0.71), 60, 14);
        let params = LyapunovNormParams::new(0.5 * 2f64.ln(), 40, 2f64.ln()).unwrap();
        let x_u = w.base().offset(0.4, 0.0);
        let rec = stopping_times(&fa, &w, x_u, 0.01, 20, &params).unwrap();
        assert_eq!(rec.tau, 6);
        assert_eq!(rec.t, 6);
    }

    #[test]
    fn stopping_times_quasi_isometry() {
        // For the constant cocycle the closed form gives slope
        // ln(λu/λc)/ln λc ≈ 2.975 between ℓ and τ(ℓ).
        let fb = MapSpec::irreducible_expanding();
        let w = random_word(&fb, TorusPoint::new(0.43, 0.29), 75, 15);
        let params = LyapunovNormParams::new(0.5 * lambda_c_b().ln(), 40, lambda_c_b().ln()).unwrap();
        let x_u = w.base().offset(0.3, 0.3 * golden_u_slope());
        let taus: Vec<usize> = (20..=30)
            .map(|ell| {
                stopping_times(&fb, &w, x_u, 0.01, ell, &params)
                    .unwrap()
                    .tau
            })
            .collect();
        let theta = 2.98;
        for i in 0..taus.len() {
            for j in (i + 1)..taus.len() {
                let dm = (j - i) as f64;
                let dt = (taus[j] as f64 - taus[i] as f64).abs();
                assert!(dt <= (theta + 0.1) * dm + 2.0);
                assert!(dt >= dm / (theta + 0.1) - 2.0);
            }
        }
    }

    #[test]
    fn distortion_probe_cases() {
        // Constant derivative: identically zero.
        let fb = MapSpec::irreducible_expanding();
        let w1 = random_word(&fb, TorusPoint::new(0.1, 0.2), 50, 16);
        let w2 = random_word(&fb, TorusPoint::new(0.1, 0.2), 50, 17);
        let probe = holder_distortion_probe(&fb, &w1, &w2, 40).unwrap();
        assert_eq!(probe, 0.0);

        // Monotone non-decreasing in n, and stabilizing for a pair on one
        // unstable curve of the sheared map (backward orbits converge).
        let f = MapSpec::sheared_irreducible(0.01);
        let p = TorusPoint::new(0.62, 0.48);
        let a = random_word(&f, p, 110, 18);
        let (e_u, _) = unstable_direction(&f, &a).unwrap();
        let z = p.offset(0.12 * e_u.unit_vector().vx, 0.12 * e_u.unit_vector().vy);
        let b = a.parallel_past(&f, z).unwrap();
        let p50 = holder_distortion_probe(&f, &a, &b, 50).unwrap();
        let p75 = holder_distortion_probe(&f, &a, &b, 75).unwrap();
        let p100 = holder_distortion_probe(&f, &a, &b, 100).unwrap();
        assert!(p75 >= p50 && p100 >= p75);
        assert!(p100 - p50 <= 1e-6, "tail not geometric: {}", p100 - p50);
    }
}
