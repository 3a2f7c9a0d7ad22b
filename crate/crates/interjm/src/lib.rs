//! Files, command line, parallel drivers and the HTTP prediction service
//! for [`interjm_core`].

pub mod cli;
pub mod engine;
pub mod error;
pub mod io;
pub mod parallel;
pub mod service;

pub use error::{Error, Result};
