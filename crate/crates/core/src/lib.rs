mod error;
mod hashing;
mod matrix;

pub mod corpus;
pub mod facets;
pub mod gateway;
pub mod interpret;
pub mod metrics;
pub mod pipeline;
pub mod probes;
pub mod quantize;
pub mod simgen;

pub use error::{Error, Result};
pub use matrix::Matrix;
