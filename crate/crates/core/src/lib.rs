//! Low-gain integral control toolkit.
//!
//! The crate covers the full workflow for supplementary integral loops around
//! stable plants:
//!
//! * [`model`]: LTI/nonlinear plant data, DC gains, slow dynamics and the
//!   slow sensitivity frequency response.
//! * [`measures`]: matrix measures and contraction certificates.
//! * [`lfr`]: linear fractional representations of the equilibrium
//!   input-to-error map and multiplier cones.
//! * [`sdp`]: a small dense LMI solver (log-barrier interior point).
//! * [`synthesis`]: H-infinity and robust gain synthesis, robust analysis.
//! * [`sim`]: closed-loop and reduced-model simulation.
//! * [`examples`]: built-in instances (pendulum, power system, saturated plant).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod examples;
pub mod io;
pub mod lfr;
pub mod linalg;
pub mod measures;
pub mod model;
pub mod sdp;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense real vector used throughout the crate.
pub type Vec64 = nalgebra::DVector<f64>;
