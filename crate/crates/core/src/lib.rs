//! Quadrotor actuator fault detection and isolation lab.
//!
//! The crate simulates a 6-DOF quadrotor with multiplicative motor faults,
//! generates closed-loop trajectories under LQR and CBF-QP controllers,
//! canonicalizes trajectory windows under the four 90° yaw-rotation cases,
//! and trains/evaluates neural detectors that are only ever shown faults in
//! motor #2.

pub mod config;
pub mod control;
pub mod eval;
pub mod features;
pub mod quadsim;
pub mod rng;
pub mod symmetry;
pub mod train;
pub mod trajio;
pub mod window;

pub use quadsim::{
    Convention, FaultSchedule, FaultVector, MotorCommand, Output, QuadParams, SimConfig, State,
    Trajectory, Wrench,
};

pub use tensornet;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("network error: {0}")]
    Net(#[from] tensornet::NetError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
