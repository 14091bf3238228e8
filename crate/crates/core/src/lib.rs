//! Rolling-origin benchmarking for spatiotemporal epidemic forecasters.

pub mod error;
pub mod forecasters;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod outbreak;
pub mod panel;
pub mod priors;
pub mod scalar;
pub mod synthetic;
pub mod engine;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MixingOperator = graph::MixingOperator<f64>;
pub type MixingOperatorF32 = graph::MixingOperator<f32>;
pub type AdjacencyMatrix = graph::AdjacencyMatrix<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type MetricSet = metrics::MetricSet<f64>;
pub type MetricSetF32 = metrics::MetricSet<f32>;
pub type IntervalEstimate = metrics::IntervalEstimate<f64>;
