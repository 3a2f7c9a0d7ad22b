//! Joint models for a longitudinal biomarker and a time-to-event outcome in
//! the presence of an intermediate event (reintervention, adverse event) that
//! changes both the biomarker trajectory and the hazard.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! computation over immutable inputs; file formats, the command line, the
//! parallel drivers and the HTTP service live in the `interjm` crate.
//!
//! Module map:
//!
//! - [`data`]: subject records, the intermediate-event indicator and the
//!   time-since-event transform.
//! - [`spline`]: B-spline and natural cubic spline bases.
//! - [`quadrature`]: adaptive 15-point Gauss-Kronrod integration.
//! - [`longitudinal`]: the piecewise mixed-effects trajectory and its
//!   Gaussian measurement likelihood.
//! - [`survival`]: baseline hazards, association structures and the
//!   relative-risk likelihood.
//! - [`model`]: the declarative model specification and parameter vector.
//! - [`inference`]: Metropolis-within-Gibbs fitting and new-subject random
//!   effect sampling.
//! - [`prediction`]: scenario-adaptive dynamic survival predictions.
//! - [`evaluation`]: time-dependent AUC and expected prediction error.
//! - [`simulation`]: the data generator for the three benchmark scenarios.
//! - [`benchmark`]: the train/test comparison with the extrapolation
//!   comparator.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod prelude {
    pub(crate) use alloc::boxed::Box;
    pub(crate) use alloc::format;
    pub(crate) use alloc::string::{String, ToString};
    pub(crate) use alloc::vec;
    pub(crate) use alloc::vec::Vec;
    #[allow(unused_imports)]
    pub(crate) use num_traits::Float as _;
}

pub mod benchmark;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod linalg;
pub mod longitudinal;
pub mod model;
pub mod prediction;
pub mod quadrature;
pub mod simulation;
pub mod spline;
pub mod stats;
pub mod survival;

pub use data::{intermediate_indicator, time_since_intermediate, Dataset, Measurement, SubjectRecord};
pub use error::{Error, Result};
pub use model::{JointParams, ModelSpec};
