//! Demand-driven execution runtime.
//!
//! Work is expressed as demands deposited in a central store; workers
//! withdraw and execute them, and completed results are memoized by
//! signature so equal demands are never computed twice.

pub mod clock;
pub mod codec;
pub mod demand;
pub mod executor;
pub mod manage;
pub mod pipeline;
pub mod scalar;
pub mod store;
pub mod tiers;
pub mod transport;

/// Scalar used by the shipped pipeline executors.
pub type Real = f64;
pub type Sample = pipeline::Sample<Real>;
pub type FeatureVector = pipeline::FeatureVector<Real>;
pub type TrainingSet = pipeline::TrainingSet<Real>;
pub type ResultSet = pipeline::ResultSet<Real>;
