//! Cooperative vehicle position tracking over a slotted broadcast channel.
//!
//! The numeric kernels (motion model, unscented filter, collision analysis,
//! weighting curve) are generic over [`Real`] so they run in `f32` or `f64`;
//! the aliases below pin the `f64` instantiation used by the simulator.

pub mod channel;
pub mod config;
pub mod congestion;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod metrics;
pub mod mobility;
pub mod model;
pub mod scalar;
pub mod strategy;

pub use config::{CongestionKind, SimConfig, StrategyKind};
pub use error::{Error, Result};
pub use model::{build_graph, distance, EuclideanGraph, VehicleId, VehicleState};
pub use scalar::Real;

pub type State = model::VehicleState<f64>;
pub type Graph = model::EuclideanGraph<f64>;
pub type Estimate = filter::StateEstimate<f64>;
pub type Noise = filter::NoiseModel<f64>;
pub type Track = filter::TrackEntry<f64>;
pub type Covariance = filter::Cov6<f64>;
