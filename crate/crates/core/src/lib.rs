//! Ricci-flow deformation of cosmological initial data on periodic grids.

pub mod chart;
pub mod constraints;
pub mod coupling;
pub mod error;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod homogeneous;
pub mod kernel;
pub mod pinching;
pub mod pipeline;
pub mod snapshot;
pub mod tensor;

pub use chart::{GridChart, StencilOrder};
pub use error::{Error, Result};
pub use field::{ConnectionField, CovectorField, MetricField, ScalarField, SymTensorField};

#[cfg(test)]
mod oracles;
