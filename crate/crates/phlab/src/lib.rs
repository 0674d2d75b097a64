//! phlab — a numerical laboratory for partially hyperbolic endomorphisms of
//! the 2-torus.
//!
//! The crate builds up, layer by layer, the computational objects attached to
//! a non-invertible partially hyperbolic map `f: T² → T²`:
//!
//! - [`torus`]: flat-torus arithmetic and projective directions;
//! - [`maps`]: the endomorphisms themselves (linear and bump-sheared), with
//!   inverse branches and cone certification;
//! - [`extension`]: finite pasts as a computational stand-in for the inverse
//!   limit, with the `2^{-n}` metric and fiber sampling;
//! - [`splitting`]: unstable/center directions, cocycle norms, Birkhoff
//!   center exponents, Lyapunov norms, and stopping times;
//! - [`leaves`]: unstable arcs by graph transform, center curves, holonomy,
//!   specialness and minimality probes, coupled configurations;
//! - [`normal_form`]: leafwise densities, affine charts, and the
//!   two-dimensional center-unstable chart;
//! - [`measure`]: empirical invariant measures from arc pushforward.
//!
//! Everything is deterministic given explicit seeds; see [`rng`] for the
//! generator contract. The `phlab` CLI crate wraps these modules into
//! reproducible experiments.

pub mod drift;
pub mod error;
pub mod extension;
mod grid;
pub mod leaves;
pub mod maps;
pub mod measure;
pub mod normal_form;
pub mod rng;
pub mod splitting;
pub mod torus;

pub use error::{PhlabError, Result};
pub use extension::{Chooser, FiberSample, NeDistance, PastWord};
pub use maps::{certify_cones, ConeCertificate, ConeField, Frame, MapSpec, Perturbation};
pub use measure::{GridHistogram, MeasureReport};
pub use rng::SplitMix64;
pub use splitting::{ExponentEstimate, LyapunovNormParams, SplittingEstimate, StoppingTimeRecord};
pub use torus::{angle_between, torus_distance, Direction, Mat2, TangentVector, TorusPoint};
