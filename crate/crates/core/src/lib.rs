//! Flood-susceptibility mapping with a graph transformer over a k-nearest
//! neighbour graph of sample points.

pub mod error;
pub mod explain;
pub mod graph;
pub mod ingest;
pub mod mapping;
pub mod metrics;
pub mod model;
pub mod pe;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod scenario;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
