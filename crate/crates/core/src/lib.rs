//! Heisenberg-scaling estimation of analytic functions with quantum sensor
//! networks.
//!
//! The crate computes quantum Cramér-Rao bounds for a scalar function of `d`
//! sensed parameters, simulates the two-step entangled protocol (local estimates
//! followed by a GHZ linear-combination measurement) against unentangled
//! baselines in the qubit-time and photon-number settings, optimizes how the
//! resource is split between the steps, and checks every closed-form error
//! formula with Monte Carlo.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`). The `*64` aliases
//! below fix the scalar to `f64`, which is what the CLI and the Monte Carlo
//! harness use.

// `!(x > 0)` style checks reject NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod analytic_fn;
pub mod bounds;
pub mod error;
pub mod experiment;
pub mod interpolation;
pub mod linalg;
pub mod measurement;
pub mod protocol;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type AnalyticFunction64 = analytic_fn::AnalyticFunction<f64>;
pub type ParamVector64 = analytic_fn::ParamVector<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type BoundReport64 = bounds::BoundReport<f64>;
pub type CoordinateBasis64 = bounds::CoordinateBasis<f64>;
pub type TwoStepPrediction64 = bounds::TwoStepPrediction<f64>;
pub type PhotonPrediction64 = bounds::PhotonPrediction<f64>;
pub type GhzSpec64 = measurement::GhzSpec<f64>;
pub type ResourceBudget64 = protocol::ResourceBudget<f64>;
pub type AllocationPlan64 = allocation::AllocationPlan<f64>;
pub type TrialResult64 = protocol::TrialResult<f64>;
pub type MseEstimate64 = experiment::MseEstimate<f64>;
pub type ProtocolConfig64 = experiment::ProtocolConfig<f64>;
pub type GaussianBeam64 = interpolation::GaussianBeam<f64>;
pub type SensorLayout64 = interpolation::SensorLayout<f64>;

/// Version string embedded in exported metadata.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
