//! Empirical invariant measures: pushforward of normalized arclength along
//! unstable arcs, histogram comparison, and reference product measures.
//!
//! The estimator carries arclength mass per straight segment and splits it
//! across grid cells by exact segment–cell intersection length, so the
//! histograms are free of sampling noise. Averaged (windowed Cesàro) and
//! last-iterate histograms are both reported.

use serde::{Deserialize, Serialize};

use crate::error::{PhlabError, Result};
use crate::leaves::{SegmentChain, UnstableArc};
use crate::maps::MapSpec;
use crate::splitting::center_stretch;
use crate::torus::TorusPoint;

/// An `n × n` mass table on the torus, cells `[i/n, (i+1)/n) × [j/n, (j+1)/n)`
/// indexed `j·n + i`, masses summing to 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridHistogram {
    pub grid_n: usize,
    pub masses: Vec<f64>,
}

impl GridHistogram {
    /// Normalize a raw mass table.
    pub fn from_masses(grid_n: usize, mut masses: Vec<f64>) -> Result<GridHistogram> {
        if masses.len() != grid_n * grid_n {
            return Err(PhlabError::ShapeMismatch(masses.len(), grid_n * grid_n));
        }
        let total: f64 = masses.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(PhlabError::InvalidParameter(
                "histogram has no mass".into(),
            ));
        }
        for m in masses.iter_mut() {
            *m /= total;
        }
        Ok(GridHistogram { grid_n, masses })
    }

    pub fn uniform(grid_n: usize) -> GridHistogram {
        GridHistogram {
            grid_n,
            masses: vec![1.0 / (grid_n * grid_n) as f64; grid_n * grid_n],
        }
    }

    pub fn mass_at(&self, i: usize, j: usize) -> f64 {
        self.masses[j * self.grid_n + i]
    }

    /// Total mass of row `j` (cells with second coordinate in
    /// `[j/n, (j+1)/n)`).
    pub fn row_mass(&self, j: usize) -> f64 {
        (0..self.grid_n).map(|i| self.mass_at(i, j)).sum()
    }

    /// CSV rows `i,j,mass` (only nonzero cells), in row-major order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,mass\n");
        for j in 0..self.grid_n {
            for i in 0..self.grid_n {
                let m = self.mass_at(i, j);
                if m != 0.0 {
                    s.push_str(&format!("{i},{j},{m}\n"));
                }
            }
        }
        s
    }

    /// Binary serialization: 8-byte magic "UGIBBSv1", then the grid as
    /// row-major little-endian f64.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.masses.len() * 8);
        out.extend_from_slice(b"UGIBBSv1");
        for m in &self.masses {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out
    }

    pub fn from_binary(grid_n: usize, bytes: &[u8]) -> Result<GridHistogram> {
        if bytes.len() < 8 || &bytes[..8] != b"UGIBBSv1" {
            return Err(PhlabError::InvalidParameter(
                "missing UGIBBSv1 header".into(),
            ));
        }
        let body = &bytes[8..];
        if body.len() != grid_n * grid_n * 8 {
            return Err(PhlabError::ShapeMismatch(body.len() / 8, grid_n * grid_n));
        }
        let masses = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(GridHistogram { grid_n, masses })
    }
}

/// Total-variation distance `½ Σ |m₁ - m₂|`.
pub fn tv_distance(h1: &GridHistogram, h2: &GridHistogram) -> Result<f64> {
    if h1.grid_n != h2.grid_n {
        return Err(PhlabError::ShapeMismatch(h1.grid_n, h2.grid_n));
    }
    Ok(h1
        .masses
        .iter()
        .zip(&h2.masses)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / 2.0)
}

/// Outcome of an arc-pushforward estimation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureReport {
    /// The selected histogram (averaged if `cesaro`, else last iterate).
    pub histogram: GridHistogram,
    pub last_iterate: GridHistogram,
    pub tv_to_uniform: f64,
    /// Center exponent integrated against the histogram.
    pub center_exponent: f64,
    pub iterations: usize,
    /// First iterate included in the average.
    pub window_start: usize,
}

/// Push normalized arclength measure along the iterated arc.
///
/// With `cesaro` the per-iterate histograms over the window
/// `[iterations/2 + 1, iterations]` are averaged; the seed arc's transient
/// geometry would otherwise dominate the average at small iteration counts.
/// The last-iterate histogram is always reported alongside.
pub fn push_arc_measure(
    map: &MapSpec,
    arc: &UnstableArc,
    iterations: usize,
    grid_n: usize,
    cesaro: bool,
    budget: usize,
) -> Result<MeasureReport> {
    if iterations < 1 {
        return Err(PhlabError::InvalidParameter(
            "measure pushforward needs at least one iteration".into(),
        ));
    }
    let window_start = iterations / 2 + 1;
    let mut chain = SegmentChain::from_curve(arc);
    let mut averaged = vec![0.0; grid_n * grid_n];
    let mut last = vec![0.0; grid_n * grid_n];
    let mut averaged_count = 0usize;
    let finish = |averaged: Vec<f64>,
                  last: Vec<f64>,
                  count: usize,
                  completed: usize|
     -> Result<MeasureReport> {
        let last_hist = GridHistogram::from_masses(grid_n, last)?;
        let selected = if cesaro && count > 0 {
            GridHistogram::from_masses(grid_n, averaged)?
        } else {
            last_hist.clone()
        };
        let tv = tv_distance(&selected, &GridHistogram::uniform(grid_n))?;
        let exponent = empirical_center_exponent(map, &selected)?;
        Ok(MeasureReport {
            histogram: selected,
            last_iterate: last_hist,
            tv_to_uniform: tv,
            center_exponent: exponent,
            iterations: completed,
            window_start,
        })
    };
    for it in 1..=iterations {
        chain = match chain.push_forward(map, budget) {
            Ok(c) => c,
            Err(PhlabError::ChainBudget { .. }) => {
                let partial = finish(averaged, last, averaged_count, it - 1)?;
                return Err(PhlabError::MeasureBudget {
                    completed: it - 1,
                    partial: Box::new(partial),
                });
            }
            Err(e) => return Err(e),
        };
        let rasterize_this = it == iterations || (cesaro && it >= window_start);
        if rasterize_this || it == iterations {
            let mut mass = vec![0.0; grid_n * grid_n];
            chain.accumulate_mass(grid_n, &mut mass);
            let total: f64 = mass.iter().sum();
            if cesaro && it >= window_start {
                for (a, m) in averaged.iter_mut().zip(&mass) {
                    *a += m / total;
                }
                averaged_count += 1;
            }
            if it == iterations {
                last = mass;
            }
        }
    }
    finish(averaged, last, averaged_count, iterations)
}

/// `∫ log |Df|_{E^c}| dμ` for the empirical measure, by cell-center
/// evaluation of the center stretch.
pub fn empirical_center_exponent(map: &MapSpec, h: &GridHistogram) -> Result<f64> {
    let n = h.grid_n;
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            let m = h.mass_at(i, j);
            if m == 0.0 {
                continue;
            }
            let center = TorusPoint::new((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
            total += m * center_stretch(map, center, 40)?.ln();
        }
    }
    Ok(total)
}

/// A measure on the second (center) coordinate for reference products.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum CenterFactor {
    Uniform,
    /// Atoms `(position, weight)`; weights normalized internally.
    Atoms(Vec<(f64, f64)>),
}

/// The product of Lebesgue in the first (unstable) coordinate with `nu` in
/// the second, rasterized.
pub fn product_measure_reference(nu: &CenterFactor, grid_n: usize) -> Result<GridHistogram> {
    let mut masses = vec![0.0; grid_n * grid_n];
    match nu {
        CenterFactor::Uniform => {
            return Ok(GridHistogram::uniform(grid_n));
        }
        CenterFactor::Atoms(atoms) => {
            for (pos, weight) in atoms {
                if !(0.0..1.0).contains(pos) {
                    return Err(PhlabError::InvalidParameter(format!(
                        "atom position {pos} outside [0, 1)"
                    )));
                }
                let j = ((pos * grid_n as f64).floor() as usize).min(grid_n - 1);
                for i in 0..grid_n {
                    masses[j * grid_n + i] += weight / grid_n as f64;
                }
            }
        }
    }
    GridHistogram::from_masses(grid_n, masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extension::{extend_past, Chooser};
    use crate::leaves::{minimality_probe, unstable_arc, DEFAULT_POINT_BUDGET};
    use crate::rng::SplitMix64;

    fn arc_for(map: &MapSpec, p: TorusPoint, seed: u64, radius: f64) -> UnstableArc {
        let mut rng = SplitMix64::new(seed);
        let w = extend_past(map, p, &mut Chooser::Uniform(&mut rng), 60).unwrap();
        unstable_arc(map, &w, radius, 1e-3).unwrap()
    }

    #[test]
    fn tv_distance_cases() {
        let u = GridHistogram::uniform(8);
        assert_eq!(tv_distance(&u, &u).unwrap(), 0.0);

        let mut a = vec![0.0; 64];
        a[0] = 1.0;
        let mut b = vec![0.0; 64];
        b[63] = 1.0;
        let ha = GridHistogram::from_masses(8, a).unwrap();
        let hb = GridHistogram::from_masses(8, b).unwrap();
        assert_eq!(tv_distance(&ha, &hb).unwrap(), 1.0);

        // Uniform vs one uniform row: 1 - 1/n.
        let mut row = vec![0.0; 64];
        for i in 0..8 {
            row[3 * 8 + i] = 1.0;
        }
        let hrow = GridHistogram::from_masses(8, row).unwrap();
        let d = tv_distance(&u, &hrow).unwrap();
        assert!((d - (1.0 - 1.0 / 8.0)).abs() < 1e-12);

        let h4 = GridHistogram::uniform(4);
        assert!(matches!(
            tv_distance(&u, &h4),
            Err(PhlabError::ShapeMismatch(_, _))
        ));
    }

    #[test]
    fn normalization_invariant() {
        let h = GridHistogram::from_masses(4, (0..16).map(|i| i as f64).collect()).unwrap();
        assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let h = GridHistogram::from_masses(4, (1..=16).map(|i| i as f64).collect()).unwrap();
        let bytes = h.to_binary();
        assert_eq!(&bytes[..8], b"UGIBBSv1");
        let back = GridHistogram::from_binary(4, &bytes).unwrap();
        assert_eq!(h.masses, back.masses);
    }

    #[test]
    fn product_references() {
        let u = product_measure_reference(&CenterFactor::Uniform, 16).unwrap();
        assert_eq!(tv_distance(&u, &GridHistogram::uniform(16)).unwrap(), 0.0);

        let single = product_measure_reference(&CenterFactor::Atoms(vec![(0.0, 1.0)]), 16).unwrap();
        assert!((single.row_mass(0) - 1.0).abs() < 1e-12);

        let two = product_measure_reference(
            &CenterFactor::Atoms(vec![(1.0 / 3.0, 0.5), (2.0 / 3.0, 0.5)]),
            16,
        )
        .unwrap();
        assert!((two.row_mass(5) - 0.5).abs() < 1e-12);
        assert!((two.row_mass(10) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn product_map_keeps_horizontal_circle() {
        // An arc in the circle y = 0 stays there: all mass in row 0. The
        // polyline is laid down exactly on the circle (the graph transform
        // would leave a ±1e-9 wiggle straddling the row boundary).
        let fa = MapSpec::product_expanding();
        let base = TorusPoint::new(0.37, 0.0);
        let stay = |z: TorusPoint| z.y().abs() < 1e-9 || (1.0 - z.y()).abs() < 1e-9;
        let w = extend_past(&fa, base, &mut Chooser::TrapInSet(&stay), 50).unwrap();
        let points: Vec<TorusPoint> = (-40..=40)
            .map(|k| TorusPoint::new(base.x() + k as f64 * 0.01, 0.0))
            .collect();
        let arc = crate::leaves::UnstableArc::from_polyline(w, points, 40).unwrap();
        let rep = push_arc_measure(&fa, &arc, 6, 16, false, DEFAULT_POINT_BUDGET).unwrap();
        assert!((rep.histogram.row_mass(0) - 1.0).abs() < 1e-9);
        // Center exponent of anything supported on the torus is log 2 (up
        // to the direction estimator's floor).
        assert!((rep.center_exponent - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn irreducible_map_equidistributes() {
        let fb = MapSpec::irreducible_expanding();
        let arc = arc_for(&fb, TorusPoint::new(0.21, 0.68), 5, 0.5);
        let rep = push_arc_measure(&fb, &arc, 12, 32, true, DEFAULT_POINT_BUDGET).unwrap();
        assert!(rep.tv_to_uniform <= 0.05, "tv {}", rep.tv_to_uniform);
        // Empirical invariance: shifting the averaging window by one iterate
        // barely moves the histogram.
        let rep_next = push_arc_measure(&fb, &arc, 13, 32, true, DEFAULT_POINT_BUDGET).unwrap();
        let drift = tv_distance(&rep.histogram, &rep_next.histogram).unwrap();
        assert!(drift <= 0.02, "window drift {drift}");
    }

    #[test]
    fn support_is_reachable_from_the_seed_arc() {
        // u-saturation surrogate: every occupied cell of the estimate lies in
        // the set of cells visited by the pushed arc.
        let fb = MapSpec::irreducible_expanding();
        let arc = arc_for(&fb, TorusPoint::new(0.81, 0.33), 6, 0.4);
        let rep = push_arc_measure(&fb, &arc, 8, 32, false, DEFAULT_POINT_BUDGET).unwrap();
        let cover = minimality_probe(&fb, &arc, 8, 32, DEFAULT_POINT_BUDGET).unwrap();
        for (idx, m) in rep.last_iterate.masses.iter().enumerate() {
            if *m > 0.0 {
                assert!(cover.mask[idx], "occupied cell {idx} not reachable");
            }
        }
    }

    #[test]
    fn empirical_exponents_positive_for_all_examples() {
        for map in [
            MapSpec::product_expanding(),
            MapSpec::irreducible_expanding(),
            MapSpec::sheared_product(0.01),
            MapSpec::sheared_irreducible(0.01),
        ] {
            let e = empirical_center_exponent(&map, &GridHistogram::uniform(32)).unwrap();
            assert!(e >= 0.3, "exponent {e} below the expanding threshold");
        }
    }

    #[test]
    fn uniform_exponent_matches_eigenvalue_for_irreducible() {
        let fb = MapSpec::irreducible_expanding();
        let e = empirical_center_exponent(&fb, &GridHistogram::uniform(128)).unwrap();
        let expect = ((5.0 - 5f64.sqrt()) / 2.0).ln();
        assert!((e - expect).abs() < 1e-3, "{e} vs {expect}");
    }
}
