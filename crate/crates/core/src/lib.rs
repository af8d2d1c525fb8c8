//! Observability analysis, persistently exciting input design and
//! moving-horizon training for shallow ReLU networks.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the common `f64` instantiation.

pub mod error;
pub mod mhe_train;
pub mod neighborhood;
pub mod numlin;
pub mod orthant_geo;
pub mod pe_design;
pub mod relu_net;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type WeightState64 = relu_net::WeightState<f64>;
pub type WeightState32 = relu_net::WeightState<f32>;
pub type SignMatrix64 = orthant_geo::SignMatrix<f64>;
pub type ExcitationPlan64 = pe_design::ExcitationPlan<f64>;
pub type ExcitationPlan32 = pe_design::ExcitationPlan<f32>;
pub type ObservableNeighborhood64 = neighborhood::ObservableNeighborhood<f64>;
pub type ObservableNeighborhood32 = neighborhood::ObservableNeighborhood<f32>;
pub type BatchSchedule64 = mhe_train::BatchSchedule<f64>;
pub type ConvergenceReport64 = mhe_train::ConvergenceReport<f64>;
pub type TrainRun64 = mhe_train::TrainRun<f64>;
