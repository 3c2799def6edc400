//! Simulation laboratory for locating the origin of a broadcast in a
//! peer-to-peer flooding network observed by a passive adversary.
//!
//! The crate covers topology construction, trickle and diffusion spreading,
//! adversary observation models, source estimators, closed-form detection
//! probabilities and a Monte Carlo harness tying them together.

pub mod adversary;
pub mod analytics;
pub mod estimators;
pub mod graph;
pub mod harness;
pub mod spreading;

pub use graph::{Graph, NodeId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Spread(#[from] spreading::SpreadError),
    #[error(transparent)]
    Observe(#[from] adversary::ObserveError),
    #[error(transparent)]
    Estimate(#[from] estimators::EstimateError),
    #[error(transparent)]
    Theory(#[from] analytics::TheoryError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
}
