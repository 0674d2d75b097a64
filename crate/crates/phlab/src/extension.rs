//! Finite pasts: the computational stand-in for the inverse limit.
//!
//! A point of the inverse limit of a non-invertible map is a full backward
//! orbit. Numerically we work with a [`PastWord`]: a base point together with
//! a finite sequence of inverse-branch choices, each selecting one preimage
//! of the previous coordinate. All limits taken along pasts converge
//! exponentially fast (at the domination rate), so a truncation depth of a
//! few dozen puts the tail below double precision.

use serde::{Deserialize, Serialize};

use crate::error::{PhlabError, Result};
use crate::maps::MapSpec;
use crate::rng::SplitMix64;
use crate::torus::{torus_distance, TorusPoint};

/// Tolerance for deciding that two coordinates of a past agree.
pub const COORD_MATCH_TOL: f64 = 1e-9;

/// A finite backward orbit: the base point `x_0` plus branch choices
/// selecting `x_{-1}, x_{-2}, ...`.
///
/// Invariant: `f(x_{-k-1}) = x_{-k}` within `1e-10` for every cached
/// coordinate (exact for linear maps, Newton residual otherwise).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PastWord {
    base: TorusPoint,
    branches: Vec<usize>,
    #[serde(skip)]
    points: Vec<TorusPoint>,
}

/// Branch-selection policy for extending a past.
pub enum Chooser<'a> {
    /// Pick uniformly among the preimages at each level.
    Uniform(&'a mut SplitMix64),
    /// Always pick the branch with this index (ordered lexicographically).
    Fixed(usize),
    /// Pick the lowest-index branch whose point satisfies the predicate;
    /// error if none does.
    TrapInSet(&'a dyn Fn(TorusPoint) -> bool),
}

impl PastWord {
    /// The depth-0 past: the bare base point.
    pub fn depth_zero(base: TorusPoint) -> PastWord {
        PastWord {
            base,
            branches: Vec::new(),
            points: Vec::new(),
        }
    }

    /// Rebuild the cached backward coordinates from the branch indices
    /// (used after deserialization).
    pub fn rebuild(map: &MapSpec, base: TorusPoint, branches: Vec<usize>) -> Result<PastWord> {
        let mut w = PastWord::depth_zero(base);
        for &k in &branches {
            let opts = map.inverse_branches(w.last_point())?;
            if k >= opts.len() {
                return Err(PhlabError::InvalidParameter(format!(
                    "branch index {k} out of range for degree {}",
                    opts.len()
                )));
            }
            w.branches.push(k);
            w.points.push(opts[k]);
        }
        Ok(w)
    }

    pub fn base(&self) -> TorusPoint {
        self.base
    }

    pub fn depth(&self) -> usize {
        self.branches.len()
    }

    pub fn branches(&self) -> &[usize] {
        &self.branches
    }

    /// Coordinate `x_{-k}`; `k = 0` is the base.
    pub fn coordinate(&self, k: usize) -> TorusPoint {
        if k == 0 {
            self.base
        } else {
            self.points[k - 1]
        }
    }

    /// The deepest cached coordinate `x_{-depth}`.
    pub fn last_point(&self) -> TorusPoint {
        self.coordinate(self.depth())
    }

    /// Extend this past by `extra` more levels with the given policy.
    pub fn extend(&mut self, map: &MapSpec, chooser: &mut Chooser, extra: usize) -> Result<()> {
        for _ in 0..extra {
            let opts = map.inverse_branches(self.last_point())?;
            let k = match chooser {
                Chooser::Uniform(rng) => rng.next_index(opts.len()),
                Chooser::Fixed(k) => {
                    if *k >= opts.len() {
                        return Err(PhlabError::InvalidParameter(format!(
                            "fixed branch index {k} out of range for degree {}",
                            opts.len()
                        )));
                    }
                    *k
                }
                Chooser::TrapInSet(pred) => {
                    match opts.iter().position(|p| pred(*p)) {
                        Some(k) => k,
                        None => return Err(PhlabError::TrapEmpty),
                    }
                }
            };
            self.branches.push(k);
            self.points.push(opts[k]);
        }
        Ok(())
    }

    /// Drop the `n` shallowest levels: the past of `x_{-n}` as a word of
    /// depth `depth - n`.
    pub fn truncate_front(&self, n: usize) -> PastWord {
        assert!(n <= self.depth());
        PastWord {
            base: self.coordinate(n),
            branches: self.branches[n..].to_vec(),
            points: self.points[n..].to_vec(),
        }
    }

    /// The past of a nearby point following the same symbolic history: at
    /// each level, pick the inverse branch of the current point closest to
    /// this word's coordinate. Well defined while the two stay within half
    /// the injectivity separation, which backward contraction only improves.
    pub fn parallel_past(&self, map: &MapSpec, z: TorusPoint) -> Result<PastWord> {
        let mut w = PastWord::depth_zero(z);
        for k in 1..=self.depth() {
            let target = self.coordinate(k);
            let opts = map.inverse_branches(w.last_point())?;
            let (idx, _) = opts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, torus_distance(*p, target)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .expect("at least one branch");
            w.branches.push(idx);
            w.points.push(opts[idx]);
        }
        Ok(w)
    }
}

/// Build a past of the requested depth over `p`.
pub fn extend_past(
    map: &MapSpec,
    p: TorusPoint,
    chooser: &mut Chooser,
    depth: usize,
) -> Result<PastWord> {
    let mut w = PastWord::depth_zero(p);
    w.extend(map, chooser, depth)?;
    Ok(w)
}

/// Apply the shift: the base moves forward one step, the old base becomes
/// coordinate `-1`, and the depth grows by one.
pub fn shift(map: &MapSpec, w: &PastWord) -> Result<PastWord> {
    let new_base = map.evaluate(w.base());
    let opts = map.inverse_branches(new_base)?;
    let (idx, dist) = opts
        .iter()
        .enumerate()
        .map(|(i, p)| (i, torus_distance(*p, w.base())))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("at least one branch");
    debug_assert!(
        dist < map.tau_linear() / 4.0,
        "shift failed to recover the base among the preimages"
    );
    let mut branches = Vec::with_capacity(w.depth() + 1);
    branches.push(idx);
    branches.extend_from_slice(w.branches());
    let mut points = Vec::with_capacity(w.depth() + 1);
    points.push(opts[idx]);
    points.extend((1..=w.depth()).map(|k| w.coordinate(k)));
    Ok(PastWord {
        base: new_base,
        branches,
        points,
    })
}

/// Apply the shift `n` times.
pub fn shift_n(map: &MapSpec, w: &PastWord, n: usize) -> Result<PastWord> {
    let mut out = w.clone();
    for _ in 0..n {
        out = shift(map, &out)?;
    }
    Ok(out)
}

/// Value of the `2^{-n}` metric computed from finite data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeDistance {
    /// `2^{-n}` for the largest observable `n` with agreement at all
    /// coordinates `|i| < n`.
    pub value: f64,
    /// True when the comparison ran out of stored past before finding a
    /// disagreement, so `value` is only an upper bound on the true distance
    /// (equivalently, `n` is a lower bound).
    pub truncated: bool,
}

/// The inverse-limit metric `d(x̃, ỹ) = 2^{-n}` with
/// `n = max {n : x_i = y_i for all |i| < n}`, coordinates compared within
/// [`COORD_MATCH_TOL`]. Forward coordinates are the deterministic images of
/// the bases.
pub fn ne_distance(map: &MapSpec, w1: &PastWord, w2: &PastWord) -> NeDistance {
    if torus_distance(w1.base(), w2.base()) > COORD_MATCH_TOL {
        return NeDistance {
            value: 1.0,
            truncated: false,
        };
    }
    let max_back = w1.depth().min(w2.depth());
    let mut n = 1usize;
    let mut fwd1 = w1.base();
    let mut fwd2 = w2.base();
    loop {
        // Test coordinates at ±n.
        if n > max_back {
            return NeDistance {
                value: 0.5f64.powi(n as i32 - 1) * 0.5,
                truncated: true,
            };
        }
        if torus_distance(w1.coordinate(n), w2.coordinate(n)) > COORD_MATCH_TOL {
            break;
        }
        fwd1 = map.evaluate(fwd1);
        fwd2 = map.evaluate(fwd2);
        if torus_distance(fwd1, fwd2) > COORD_MATCH_TOL {
            break;
        }
        n += 1;
    }
    NeDistance {
        value: 0.5f64.powi(n as i32),
        truncated: false,
    }
}

/// A set of distinct pasts over a common base point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FiberSample {
    pub base: TorusPoint,
    pub words: Vec<PastWord>,
    pub depth: usize,
}

/// Sample `count` distinct pasts of depth `depth` over `p`, uniform over
/// branch choices, deterministic given the seed.
pub fn fiber_sample(
    map: &MapSpec,
    p: TorusPoint,
    depth: usize,
    count: usize,
    seed: u64,
) -> Result<FiberSample> {
    let available = (map.degree() as f64).powi(depth as i32);
    if (count as f64) > available {
        return Err(PhlabError::FiberTooSmall {
            requested: count,
            available,
        });
    }
    let mut rng = SplitMix64::new(seed);
    let mut words: Vec<PastWord> = Vec::with_capacity(count);
    let mut seen: std::collections::HashSet<Vec<usize>> = std::collections::HashSet::new();
    while words.len() < count {
        let w = extend_past(map, p, &mut Chooser::Uniform(&mut rng), depth)?;
        if seen.insert(w.branches().to_vec()) {
            words.push(w);
        }
    }
    Ok(FiberSample {
        base: p,
        words,
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::MapSpec;

    #[test]
    fn consistency_invariant() {
        let f = MapSpec::sheared_irreducible(0.01);
        let mut rng = SplitMix64::new(5);
        let w = extend_past(
            &f,
            TorusPoint::new(0.2, 0.9),
            &mut Chooser::Uniform(&mut rng),
            30,
        )
        .unwrap();
        for k in 1..=w.depth() {
            let img = f.evaluate(w.coordinate(k));
            assert!(torus_distance(img, w.coordinate(k - 1)) <= 1e-10);
        }
    }

    #[test]
    fn depth_zero_and_fixed_orbit() {
        let f = MapSpec::sheared_product(0.01);
        let origin = TorusPoint::new(0.0, 0.0);
        let w = extend_past(&f, origin, &mut Chooser::Fixed(0), 0).unwrap();
        assert_eq!(w.depth(), 0);

        // The origin is fixed and lies off the shear support, so the branch
        // landing at the origin builds the constant past. Find it by trap.
        let stay = |p: TorusPoint| torus_distance(p, TorusPoint::new(0.0, 0.0)) < 1e-9;
        let w = extend_past(&f, origin, &mut Chooser::TrapInSet(&stay), 12).unwrap();
        for k in 0..=12 {
            assert!(torus_distance(w.coordinate(k), origin) < 1e-9);
        }
        // Shifting the constant past keeps it constant.
        let s = shift_n(&f, &w, 3).unwrap();
        assert!(torus_distance(s.base(), origin) < 1e-12);
        assert!(torus_distance(s.coordinate(3), origin) < 1e-12);
    }

    #[test]
    fn trap_error_when_empty() {
        let f = MapSpec::product_expanding();
        let never = |_: TorusPoint| false;
        let err = extend_past(
            &f,
            TorusPoint::new(0.3, 0.3),
            &mut Chooser::TrapInSet(&never),
            2,
        );
        assert!(matches!(err, Err(PhlabError::TrapEmpty)));
    }

    #[test]
    fn shift_is_projection_equivariant() {
        let f = MapSpec::irreducible_expanding();
        let mut rng = SplitMix64::new(77);
        let w = extend_past(
            &f,
            TorusPoint::new(0.61, 0.13),
            &mut Chooser::Uniform(&mut rng),
            10,
        )
        .unwrap();
        let s = shift(&f, &w).unwrap();
        assert_eq!(s.depth(), 11);
        assert!(torus_distance(s.base(), f.evaluate(w.base())) < 1e-12);
        assert!(torus_distance(s.coordinate(1), w.base()) < 1e-12);
        for k in 1..=w.depth() {
            assert!(torus_distance(s.coordinate(k + 1), w.coordinate(k)) < 1e-12);
        }
    }

    #[test]
    fn ne_distance_definition_cases() {
        let f = MapSpec::product_expanding();
        let p = TorusPoint::new(0.15, 0.35);
        // Same first two backward steps, then diverge.
        let w1 = PastWord::rebuild(&f, p, vec![0, 1, 2, 3]).unwrap();
        let w2 = PastWord::rebuild(&f, p, vec![0, 1, 4, 3]).unwrap();
        let d = ne_distance(&f, &w1, &w2);
        assert_eq!(d.value, 0.125);
        assert!(!d.truncated);

        // Different base points.
        let w3 = PastWord::depth_zero(TorusPoint::new(0.5, 0.5));
        let d = ne_distance(&f, &w1, &w3);
        assert_eq!(d.value, 1.0);

        // Identical words: truncated at full depth.
        let d = ne_distance(&f, &w1, &w1);
        assert!(d.truncated);
        assert!(d.value <= 0.5f64.powi(4));
    }

    #[test]
    fn ne_distance_ultrametric_on_sampled_triples() {
        let f = MapSpec::irreducible_expanding();
        let p = TorusPoint::new(0.27, 0.82);
        let sample = fiber_sample(&f, p, 12, 24, 99).unwrap();
        for i in 0..sample.words.len() {
            for j in (i + 1)..sample.words.len() {
                for k in (j + 1)..sample.words.len() {
                    let dij = ne_distance(&f, &sample.words[i], &sample.words[j]).value;
                    let djk = ne_distance(&f, &sample.words[j], &sample.words[k]).value;
                    let dik = ne_distance(&f, &sample.words[i], &sample.words[k]).value;
                    assert!(dik <= dij.max(djk) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn fibers_contract_forward() {
        let f = MapSpec::irreducible_expanding();
        let p = TorusPoint::new(0.4, 0.9);
        let sample = fiber_sample(&f, p, 14, 6, 3).unwrap();
        for n in [1usize, 3, 6] {
            for i in 0..sample.words.len() {
                for j in (i + 1)..sample.words.len() {
                    let a = shift_n(&f, &sample.words[i], n).unwrap();
                    let b = shift_n(&f, &sample.words[j], n).unwrap();
                    let d = ne_distance(&f, &a, &b);
                    assert!(d.value <= 0.5f64.powi(n as i32) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn fiber_sample_contract() {
        let f = MapSpec::product_expanding();
        let p = TorusPoint::new(0.4, 0.9);
        // count <= degree^depth enforced.
        assert!(matches!(
            fiber_sample(&f, p, 1, 7, 0),
            Err(PhlabError::FiberTooSmall { .. })
        ));
        let s = fiber_sample(&f, p, 3, 50, 1234).unwrap();
        assert_eq!(s.words.len(), 50);
        // Distinct branch sequences, shared base.
        for (i, w) in s.words.iter().enumerate() {
            assert_eq!(w.base(), p);
            for v in &s.words[i + 1..] {
                assert_ne!(w.branches(), v.branches());
            }
        }
        // Determinism.
        let s2 = fiber_sample(&f, p, 3, 50, 1234).unwrap();
        for (a, b) in s.words.iter().zip(&s2.words) {
            assert_eq!(a.branches(), b.branches());
        }
    }

    #[test]
    fn deep_preimages_are_dense() {
        // For the product map, the depth-k preimages of a point form the
        // lattice ((x+i)/3^k, (y+j)/2^k): dense at scale (1/3^k, 1/2^k).
        let f = MapSpec::product_expanding();
        let p = TorusPoint::new(0.37, 0.59);
        let k = 3;
        let mut level = vec![p];
        for _ in 0..k {
            let mut next = Vec::new();
            for z in &level {
                next.extend(f.inverse_branches(*z).unwrap());
            }
            level = next;
        }
        assert_eq!(level.len(), 6usize.pow(k as u32));
        let step_x = 1.0 / 3f64.powi(k);
        let step_y = 1.0 / 2f64.powi(k);
        for gi in 0..20 {
            for gj in 0..20 {
                let target = TorusPoint::new(gi as f64 / 20.0, gj as f64 / 20.0);
                let ok = level.iter().any(|z| {
                    let (dx, dy) = target.delta_to(*z);
                    dx.abs() <= step_x / 2.0 + 1e-12 && dy.abs() <= step_y / 2.0 + 1e-12
                });
                assert!(ok, "no deep preimage near {target:?}");
            }
        }
    }

    #[test]
    fn serde_round_trip_rebuilds() {
        let f = MapSpec::sheared_product(0.01);
        let mut rng = SplitMix64::new(8);
        let w = extend_past(
            &f,
            TorusPoint::new(0.52, 0.11),
            &mut Chooser::Uniform(&mut rng),
            15,
        )
        .unwrap();
        let text = serde_json::to_string(&w).unwrap();
        assert!(text.contains("\"base\""));
        assert!(text.contains("\"branches\""));
        let bare: PastWord = serde_json::from_str(&text).unwrap();
        let rebuilt = PastWord::rebuild(&f, bare.base(), bare.branches().to_vec()).unwrap();
        for k in 0..=15 {
            assert!(torus_distance(rebuilt.coordinate(k), w.coordinate(k)) < 1e-10);
        }
    }
}
