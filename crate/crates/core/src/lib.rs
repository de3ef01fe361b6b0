//! Learning when to assist: a closed-loop trajectory-tracking simulator, an
//! LSTM imitation learner for on/off assistance decisions, and the
//! aggregation-based retraining and evaluation around it.

mod container;
pub mod controller;
pub mod dagger;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod interface;
pub mod lstm;
pub mod session;
pub mod simulation;

pub use error::{Error, Result};

/// 3-vector in metres (positions), m/s (velocities) or newtons (forces).
pub type Vec3 = nalgebra::Vector3<f64>;
