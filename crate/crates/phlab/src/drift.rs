//! The coupled-configuration drift experiment: sample admissible
//! quadrilaterals for a sheared map, run the stopped iteration on each, and
//! summarize the center displacements.
//!
//! Admissible configurations need a fiber angle bounded away from zero at
//! the coupling depth. For a shear of size `eps` the largest achievable
//! fiber angle is of order `eps` (the shear slope times the domination
//! ratio), so the sampler steers the diverging past through the part of the
//! support box where the profile slope is large, and rejects couples whose
//! measured angle falls below the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{PhlabError, Result};
use crate::extension::{extend_past, Chooser};
use crate::leaves::{unstable_arc, y_configuration, Curve, YConfigParams, YConfigRecord};
use crate::maps::MapSpec;
use crate::rng::SplitMix64;
use crate::splitting::LyapunovNormParams;
use crate::torus::TorusPoint;

/// Parameters of the drift experiment.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DriftParams {
    /// Stopping-time threshold.
    pub epsilon: f64,
    /// Coupling depth range (inclusive).
    pub ell_min: usize,
    pub ell_max: usize,
    /// Number of admissible configurations to collect.
    pub count: usize,
    /// Minimal fiber angle at the coupling depth.
    pub alpha_min: f64,
    /// Range of unstable offsets for the translated point.
    pub du_min: f64,
    pub du_max: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            epsilon: 0.01,
            ell_min: 15,
            ell_max: 25,
            count: 100,
            alpha_min: 0.04,
            du_min: 0.8,
            du_max: 0.95,
        }
    }
}

/// Summary of a drift run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftReport {
    pub records: Vec<YConfigRecord>,
    /// Smallest single constant `β̂` with
    /// `ε/β̂ ≤ displacement_after ≤ ε·β̂` across all records.
    pub beta_hat: f64,
    /// Regression slope of `ln(displacement_before)` against the coupling
    /// depth.
    pub slope_before: f64,
    pub epsilon: f64,
}

/// Regression slope of `y` on integer-valued `x`.
fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Points of the shear box where the unstable direction is deflected hard
/// enough to create a fiber angle of at least `alpha_min` one step later.
fn strong_shear_zone(map: &MapSpec, alpha_min: f64) -> impl Fn(TorusPoint) -> bool + '_ {
    let lin = map.linear_mat();
    let lin_inv = lin.inverse();
    let (fast, _) = crate::maps::eigen_directions(lin).expect("expanding matrix");
    let e_u = fast.unit_vector();
    // Domination ratio |λ_c| / |λ_u| of the linear part: the deflection at
    // the box is damped by this factor when carried one step forward.
    let ratio = {
        let tr = lin.a + lin.d;
        let disc = (tr * tr - 4.0 * lin.det()).sqrt();
        let l1 = ((tr + disc) / 2.0).abs();
        let l2 = ((tr - disc) / 2.0).abs();
        l1.min(l2) / l1.max(l2)
    };
    move |p: TorusPoint| {
        let dphi = lin_inv.mul_mat(map.derivative(p));
        let deflect = crate::torus::angle_between(dphi.mul_vec(e_u).direction(), fast);
        deflect * ratio >= alpha_min * 1.1
    }
}

/// Run the experiment: collect `params.count` admissible configurations of
/// the given sheared map and measure each.
pub fn run_drift(map: &MapSpec, params: &DriftParams, seed: u64) -> Result<DriftReport> {
    if map.perturbation().is_none() {
        return Err(PhlabError::InvalidParameter(
            "the drift experiment needs a sheared map".into(),
        ));
    }
    let mut rng = SplitMix64::new(seed);
    let lyap = LyapunovNormParams::default_for(map)?;
    let config = YConfigParams {
        beta: 1.0 / params.alpha_min,
        lyap,
        chart_truncation: 40,
    };
    let in_zone = strong_shear_zone(map, params.alpha_min);
    let tail = 45usize;

    let mut records: Vec<YConfigRecord> = Vec::with_capacity(params.count);
    let mut attempts = 0usize;
    while records.len() < params.count {
        attempts += 1;
        if attempts > attempt_cap(params.count) {
            return Err(PhlabError::InvalidParameter(format!(
                "could not find {} admissible configurations in {attempts} attempts",
                params.count
            )));
        }
        let ell = params.ell_min + rng.next_index(params.ell_max - params.ell_min + 1);
        let base = TorusPoint::new(rng.next_f64(), rng.next_f64());
        // Shared prefix to depth ell.
        let prefix = match extend_past(map, base, &mut Chooser::Uniform(&mut rng), ell) {
            Ok(w) => w,
            Err(_) => continue,
        };
        // The y-past dives through the strong-shear zone right below the
        // coupling depth; skip bases without such a branch.
        let deep = prefix.last_point();
        let branches = map.inverse_branches(deep)?;
        let Some(zone_branch) = branches.iter().position(|z| in_zone(*z)) else {
            continue;
        };
        let mut y_word = prefix.clone();
        y_word.extend(map, &mut Chooser::Fixed(zone_branch), 1)?;
        y_word.extend(map, &mut Chooser::Uniform(&mut rng), tail - 1)?;
        let mut x_word = prefix;
        x_word.extend(map, &mut Chooser::Uniform(&mut rng), tail)?;

        let d_u = rng.next_range(params.du_min, params.du_max);
        let arc = match unstable_arc(map, &x_word, params.du_max + 0.05, 2e-3) {
            Ok(a) => a,
            Err(_) => continue,
        };
        let x_u = arc.point_at(d_u);

        match y_configuration(map, &x_word, &y_word, x_u, params.epsilon, ell, &config) {
            Ok(rec) => records.push(rec),
            Err(PhlabError::DegenerateCoupling { .. }) => continue,
            Err(PhlabError::InvalidParameter(_)) => continue,
            Err(e) => return Err(e),
        }
    }

    let mut beta_hat = 1.0f64;
    for r in &records {
        let ratio = r.displacement_after / params.epsilon;
        beta_hat = beta_hat.max(ratio).max(1.0 / ratio);
    }
    let xs: Vec<f64> = records.iter().map(|r| r.ell as f64).collect();
    let ys: Vec<f64> = records
        .iter()
        .map(|r| r.displacement_before.ln())
        .collect();
    Ok(DriftReport {
        records,
        beta_hat,
        slope_before: regression_slope(&xs, &ys),
        epsilon: params.epsilon,
    })
}

fn attempt_cap(count: usize) -> usize {
    count * 2000
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitting::LyapunovNormParams;

    #[test]
    fn special_maps_have_no_admissible_couples() {
        // Every fiber pair of the linear map has angle 0: the configuration
        // builder must refuse.
        let fb = MapSpec::irreducible_expanding();
        let mut rng = SplitMix64::new(1);
        let base = TorusPoint::new(0.3, 0.7);
        let prefix = extend_past(&fb, base, &mut Chooser::Uniform(&mut rng), 12).unwrap();
        let mut x_word = prefix.clone();
        x_word
            .extend(&fb, &mut Chooser::Uniform(&mut rng), 45)
            .unwrap();
        let mut y_word = prefix;
        y_word
            .extend(&fb, &mut Chooser::Uniform(&mut rng), 45)
            .unwrap();
        let arc = unstable_arc(&fb, &x_word, 0.9, 2e-3).unwrap();
        let x_u = arc.point_at(0.85);
        let lyap =
            LyapunovNormParams::new(0.16, 40, ((5.0 - 5f64.sqrt()) / 2.0).ln()).unwrap();
        let config = YConfigParams {
            beta: 25.0,
            lyap,
            chart_truncation: 40,
        };
        let err = y_configuration(&fb, &x_word, &y_word, x_u, 0.01, 12, &config);
        assert!(matches!(err, Err(PhlabError::DegenerateCoupling { .. })));
    }

    #[test]
    fn small_drift_run_is_bounded() {
        // A reduced run: a handful of configurations, coarse checks; the
        // acceptance suite runs the full experiment.
        let map = MapSpec::sheared_irreducible(0.05);
        let params = DriftParams {
            count: 6,
            ell_min: 12,
            ell_max: 16,
            ..DriftParams::default()
        };
        let report = run_drift(&map, &params, 77).unwrap();
        assert_eq!(report.records.len(), 6);
        for r in &report.records {
            assert!(r.alpha >= params.alpha_min);
            assert!(r.displacement_after > 0.0);
            assert!(r.m == r.tau);
        }
        assert!(report.beta_hat <= 80.0, "beta_hat {}", report.beta_hat);
        assert!(report.slope_before < 0.0);
    }
}
