//! End-to-end measurement runs used by the acceptance suite and the
//! `bench` CLI subcommands.
//!
//! Live runs (`refresh`, `camera`, `linear`, `trajectory`) start an
//! emulator and a twin on loopback and need a multi-threaded tokio runtime.
//! The others are pure computation.

mod live;
mod offline;

use std::fmt;

use serde::Serialize;

pub use live::{
    camera_latency, judge_camera, judge_linear, judge_refresh, judge_trajectory,
    linear_repeatability, refresh_benchmark, trajectory_mapping, CameraLatencyReport,
    CameraStreamSummary, LinearRepeatReport, RefreshBenchReport, StreamPeriodSummary,
    TrajectoryReport,
};
pub use offline::{
    judge_kinematics, judge_model_check, judge_protocol, kinematics_suite, model_check,
    oracle_forward_position, protocol_suite, random_wire_roundtrip, KinematicsReport,
    ModelCheckReport, ProtocolReport,
};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ScenarioError(pub String);

macro_rules! scenario_error_from {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for ScenarioError {
            fn from(e: $t) -> Self {
                Self(e.to_string())
            }
        })*
    };
}

scenario_error_from!(
    crate::emulator::EmulatorError,
    crate::emulator::ControlError,
    crate::twin::ClientError,
    crate::gateway::GatewayError,
    crate::kinematics::KinematicsError,
    crate::wire::ProtocolError,
    std::io::Error,
    reqwest::Error,
);

pub type ScenarioResult<T> = Result<T, ScenarioError>;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub summary: String,
    pub details: serde_json::Value,
}

impl CriterionReport {
    pub fn new(id: u8, title: &'static str, passed: bool, summary: String, details: impl Serialize) -> Self {
        Self {
            id,
            title,
            passed,
            summary,
            details: serde_json::to_value(details).unwrap_or(serde_json::Value::Null),
        }
    }

    /// A run that could not even be set up counts as a failure.
    pub fn aborted(id: u8, title: &'static str, err: &ScenarioError) -> Self {
        Self::new(id, title, false, format!("aborted: {err}"), serde_json::Value::Null)
    }
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {} [{}] {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.summary
        )
    }
}

pub const TITLES: [&str; 7] = [
    "refresh period",
    "camera-load latency",
    "linear move repeatability",
    "trajectory mapping",
    "kinematics properties",
    "protocol and auth",
    "workcell model checking",
];
