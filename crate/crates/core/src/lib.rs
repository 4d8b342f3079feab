//! Temporal relationship prediction: positive-unlabeled learning of future
//! link formation on insertion-only attributed graph sequences.

pub mod artifact;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod seed;
pub mod synthetic;
pub mod train;
pub mod model;
pub mod parallel;
pub mod prior;
pub mod risk;
