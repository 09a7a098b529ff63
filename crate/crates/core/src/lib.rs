#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coincidence;
pub mod config;
pub mod error;
pub mod ionization;
pub mod measurement;
pub mod montecarlo;
pub mod physcore;
pub mod report;
pub mod scanmap;
pub mod tof;

pub use error::{Error, Result};
pub use measurement::Measurement;
