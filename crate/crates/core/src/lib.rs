//! Simulation of mechanical systems subject to linear constraints whose
//! pointwise rank may vary across the configuration chart.
//!
//! The crate integrates the constrained dynamics on each maximal-rank
//! region, detects crossings of the rank-transition set, applies the
//! cometric projection rule for the momentum jump at a crossing, and
//! accounts for the kinetic energy lost in the process.
//!
//! Organization:
//! - [`geometry`]: metric/codistribution algebra, projectors, subspace bases;
//! - [`dynamics`]: equations of motion and adaptive integration on a stratum;
//! - [`transitions`]: one-sided limit subspaces, jump decision and rule;
//! - [`systems`]: ready-made example systems with closed-form references;
//! - [`scenario`]: scenario files, the run/classify/probe drivers, CSV export.

pub mod dynamics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod linalg;
pub mod rk;
pub mod scenario;
pub mod systems;
pub mod transitions;

pub use error::{Error, Result};
