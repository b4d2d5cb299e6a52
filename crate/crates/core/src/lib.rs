//! Scene reconstruction with a human prior: monocular depth alignment,
//! pointmap geometry, toy-scale feature fusion, training losses and
//! benchmark metrics.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod config;
pub mod depth;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod resample;
pub mod rng;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
