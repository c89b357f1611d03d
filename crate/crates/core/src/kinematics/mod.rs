//! Kinematics of a 6-axis serial arm described by a Denavit-Hartenberg table.
//!
//! Units: millimetres and radians everywhere in this module. Degrees only
//! appear at the wire boundary (see [`crate::wire`]).

mod dh;
mod ik;
mod pose;

pub use dh::{forward_kinematics, jacobian, link_frames, DhRow, DhTable, JointLimit};
pub use ik::{
    ik_step_lm, ik_step_newton, lm_damping, solve_ik, IkProblem, IkResult, IkTraceEntry,
    SolverSettings, StepRecord,
};
pub use pose::{task_residual, Pose};

use serde::{Deserialize, Serialize};

/// Number of joints handled by this crate.
pub const JOINTS: usize = 6;

pub type Vector6 = nalgebra::Vector6<f64>;
pub type Matrix6 = nalgebra::Matrix6<f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid DH table: {0}")]
    InvalidTable(String),
    #[error("numeric failure at iteration {iteration}")]
    NumericFailure { iteration: usize, q: JointConfig },
    #[error("singular jacobian (condition ratio {ratio:e})")]
    SingularJacobian { ratio: f64 },
}

/// Joint angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub [f64; JOINTS]);

impl JointConfig {
    pub const HOME: JointConfig = JointConfig([0.0; JOINTS]);

    pub fn new(q: [f64; JOINTS]) -> Self {
        Self(q)
    }

    pub fn from_degrees(deg: [f64; JOINTS]) -> Self {
        Self(deg.map(f64::to_radians))
    }

    pub fn to_degrees(&self) -> [f64; JOINTS] {
        self.0.map(f64::to_degrees)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_vector(&self) -> Vector6 {
        Vector6::from_column_slice(&self.0)
    }

    pub fn from_vector(v: &Vector6) -> Self {
        let mut q = [0.0; JOINTS];
        q.copy_from_slice(v.as_slice());
        Self(q)
    }

    /// Largest absolute per-joint difference.
    pub fn max_abs_diff(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn ensure_finite(&self) -> Result<(), KinematicsError> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(KinematicsError::InvalidArgument(format!(
                "joint {} is not finite",
                i + 1
            ))),
            None => Ok(()),
        }
    }
}

impl From<[f64; JOINTS]> for JointConfig {
    fn from(q: [f64; JOINTS]) -> Self {
        Self(q)
    }
}
