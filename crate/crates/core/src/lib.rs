//! Lowest-modality densities and spectral densities via taut strings.

// `!(x > 0.0)` is used on purpose so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod density;
pub mod error;
pub mod exec;
pub mod json;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod tautstring;
pub mod testbeds;

pub use error::{Error, Result};
