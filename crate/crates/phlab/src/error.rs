use thiserror::Error;

use crate::leaves::CoverageReport;
use crate::measure::MeasureReport;

/// Errors produced by the numerical routines.
///
/// Failures that can carry partial data (budget exhaustion in the probes) do
/// so, because a half-finished coverage mask is often exactly what one needs
/// to diagnose an exploding arc.
#[derive(Debug, Error)]
pub enum PhlabError {
    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Newton iteration for inverse branch {branch} did not converge (residual {residual:.3e})")]
    NewtonDiverged { branch: usize, residual: f64 },

    #[error("no inverse branch lands in the requested trap set")]
    TrapEmpty,

    #[error("requested {requested} fiber words but only {available:.0} distinct pasts exist at this depth")]
    FiberTooSmall { requested: usize, available: f64 },

    #[error("direction estimate did not stabilize: residual {residual:.3e} at depth {depth}")]
    DirectionUnstable { residual: f64, depth: usize },

    #[error("Lyapunov norm series not converged: last term is {fraction:.3e} of the total; decrease lambda or deepen the truncation")]
    LyapunovNotConverged { fraction: f64 },

    #[error("density product not converged: last factor deviates from 1 by {deviation:.3e}")]
    DensityNotConverged { deviation: f64 },

    #[error("stopping time scan exceeded the cap of {cap} iterates")]
    StoppingTimeCap { cap: usize },

    #[error("arc trimming emptied the curve (radius too large for this depth)")]
    ArcEmpty,

    #[error("center curve step rejected after {halvings} halvings at arclength {s:.6}")]
    StepRejected { halvings: usize, s: f64 },

    #[error("no crossing with the target leaf within the search radius")]
    NoCrossing,

    #[error("degenerate coupling: fiber angle {angle:.3e} below the admissibility threshold {threshold:.3e}")]
    DegenerateCoupling { angle: f64, threshold: f64 },

    #[error("segment budget exceeded: pushforward needs more than {budget} segments")]
    ChainBudget { budget: usize },

    #[error("point budget exhausted after {completed} iterations of the coverage probe")]
    CoverageBudget {
        completed: usize,
        partial: Box<CoverageReport>,
    },

    #[error("point budget exhausted after {completed} iterations of the measure pushforward")]
    MeasureBudget {
        completed: usize,
        partial: Box<MeasureReport>,
    },

    #[error("histogram shapes differ: {0} vs {1}")]
    ShapeMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, PhlabError>;
