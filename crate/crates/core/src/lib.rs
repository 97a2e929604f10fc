//! Flat any-order autoregressive generator for mixed-type tables, with the
//! privacy transforms, quality metrics and membership-inference audit that
//! go with it.

pub mod audit;
pub mod discretize;
pub mod error;
pub mod metrics;
pub mod model;
pub mod persist;
pub mod pipeline;
pub mod protect;
pub mod rng;
pub mod sampler;
pub mod schema;
pub mod tensor;

pub use error::{Error, Result};
