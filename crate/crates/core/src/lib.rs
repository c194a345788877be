//! Numerical laboratory for quantile-based Slutsky-symmetry restrictions.
//!
//! The crate builds synthetic heterogeneous demand systems with known
//! Slutsky matrices, computes population quantile objects for them in closed
//! form, estimates the same objects from simulated cross sections by product
//! kernels, assembles the quantile-side symmetry condition under three
//! derivative channels, and calibrates a bootstrap specification test.

pub mod demand;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod numerics;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
