//! Slot-level simulation of cooperative tracking: the per-slot world
//! update, calibration of the error-threshold map and Monte Carlo
//! campaigns.

pub mod calibrate;
pub mod campaign;
pub mod scenario;
pub mod world;

pub use calibrate::{calibrate_error_distribution, calibrate_map};
pub use campaign::{monte_carlo, CampaignSummary, Scheme, SweepSpec};
pub use scenario::scenario_trace;
pub use world::{run_sim, World};
