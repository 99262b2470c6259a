//! Numerical laboratory for the vertex-reinforced jump process on the
//! hierarchical lattice and its H^{2|2} random Schrödinger operator.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod bounds;
pub mod coarse;
pub mod error;
pub mod experiment;
pub mod gig;
pub mod graph;
pub mod green;
pub mod lattice;
pub mod linalg;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use graph::{DenseWeights, WeightedGraph};
