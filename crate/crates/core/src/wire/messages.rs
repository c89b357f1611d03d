use std::collections::HashSet;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::kinematics::{JointConfig, Pose, JOINTS};

/// Tolerance on the wire quaternion norm.
pub const WIRE_QUATERNION_TOL: f64 = 1e-6;

/// Signals every IO snapshot must carry.
pub const MANDATORY_SIGNALS: [&str; 6] = ["DO_3", "DO_4", "DO_5", "DO_GRIP", "DI_IR", "DO_CONVEYOR"];

/// JSON codec for a wire payload.
///
/// `encode` emits fields in declaration order so the bytes are stable;
/// `decode` reports the first missing top-level field by name before
/// attempting full deserialisation.
pub trait WireMessage: Serialize + DeserializeOwned + Sized {
    const FIELDS: &'static [&'static str];

    fn validate(&self) -> Result<(), ProtocolError> {
        Ok(())
    }

    fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("wire messages always serialise")
    }

    fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let value: serde_json::Value = serde_json::from_slice(bytes)?;
        let obj = value.as_object().ok_or_else(|| ProtocolError::Malformed {
            line: 1,
            column: 1,
            message: "expected a JSON object".into(),
        })?;
        if let Some(missing) = Self::FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(ProtocolError::MissingField((*missing).to_string()));
        }
        let msg: Self = serde_json::from_value(value).map_err(|e| {
            let text = e.to_string();
            let field = Self::FIELDS
                .iter()
                .find(|f| text.contains(&format!("`{f}`")))
                .copied()
                .unwrap_or("payload");
            ProtocolError::invalid(field, text)
        })?;
        msg.validate()?;
        Ok(msg)
    }
}

/// Joint angles in degrees, polled by the joints stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTargetMsg {
    pub joints: [f64; JOINTS],
    pub seq: u64,
    pub timestamp_ms: u64,
}

impl JointTargetMsg {
    pub fn from_config(q: &JointConfig, seq: u64, timestamp_ms: u64) -> Self {
        Self {
            joints: q.to_degrees(),
            seq,
            timestamp_ms,
        }
    }

    pub fn to_config(&self) -> JointConfig {
        JointConfig::from_degrees(self.joints)
    }
}

impl WireMessage for JointTargetMsg {
    const FIELDS: &'static [&'static str] = &["joints", "seq", "timestamp_ms"];

    fn validate(&self) -> Result<(), ProtocolError> {
        finite_joints("joints", &self.joints)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// w-first quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireOrient {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
}

/// TCP position (mm) and orientation, polled by the robtarget stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobTargetMsg {
    pub pos: WirePosition,
    pub orient: WireOrient,
    pub seq: u64,
    pub timestamp_ms: u64,
}

impl RobTargetMsg {
    pub fn from_pose(pose: &Pose, seq: u64, timestamp_ms: u64) -> Self {
        let [q1, q2, q3, q4] = pose.quat_wxyz();
        Self {
            pos: WirePosition {
                x: pose.position.x,
                y: pose.position.y,
                z: pose.position.z,
            },
            orient: WireOrient { q1, q2, q3, q4 },
            seq,
            timestamp_ms,
        }
    }

    pub fn to_pose(&self) -> Result<Pose, ProtocolError> {
        let o = self.orient;
        Pose::from_wxyz([self.pos.x, self.pos.y, self.pos.z], [o.q1, o.q2, o.q3, o.q4])
            .map_err(|e| ProtocolError::invalid("orient", e.to_string()))
    }
}

impl WireMessage for RobTargetMsg {
    const FIELDS: &'static [&'static str] = &["pos", "orient", "seq", "timestamp_ms"];

    fn validate(&self) -> Result<(), ProtocolError> {
        let p = self.pos;
        if ![p.x, p.y, p.z].iter().all(|v| v.is_finite()) {
            return Err(ProtocolError::invalid("pos", "non-finite coordinate"));
        }
        let o = self.orient;
        let norm = (o.q1 * o.q1 + o.q2 * o.q2 + o.q3 * o.q3 + o.q4 * o.q4).sqrt();
        if norm.is_nan() || (norm - 1.0).abs() > WIRE_QUATERNION_TOL {
            return Err(ProtocolError::invalid(
                "orient",
                format!("quaternion norm {norm} is not 1"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalKind {
    DI,
    DO,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoSignal {
    pub name: String,
    pub kind: SignalKind,
    pub value: u8,
}

/// Every configured digital signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoSnapshotMsg {
    pub signals: Vec<IoSignal>,
    pub seq: u64,
    pub timestamp_ms: u64,
}

impl IoSnapshotMsg {
    pub fn value(&self, name: &str) -> Option<u8> {
        self.signals.iter().find(|s| s.name == name).map(|s| s.value)
    }

    pub fn is_high(&self, name: &str) -> bool {
        self.value(name) == Some(1)
    }
}

impl WireMessage for IoSnapshotMsg {
    const FIELDS: &'static [&'static str] = &["signals", "seq", "timestamp_ms"];

    fn validate(&self) -> Result<(), ProtocolError> {
        let mut seen = HashSet::new();
        for s in &self.signals {
            if s.value > 1 {
                return Err(ProtocolError::invalid(
                    "signals",
                    format!("{} has value {}", s.name, s.value),
                ));
            }
            if !seen.insert(s.name.as_str()) {
                return Err(ProtocolError::invalid(
                    "signals",
                    format!("duplicate signal {}", s.name),
                ));
            }
        }
        if let Some(m) = MANDATORY_SIGNALS.iter().find(|m| !seen.contains(**m)) {
            return Err(ProtocolError::invalid("signals", format!("{m} is missing")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Info,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpyEvent {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub level: LogLevel,
    pub text: String,
}

/// Program log entries newer than the requested `since`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpyLogMsg {
    pub events: Vec<SpyEvent>,
    pub next_since: u64,
}

impl WireMessage for SpyLogMsg {
    const FIELDS: &'static [&'static str] = &["events", "next_since"];

    fn validate(&self) -> Result<(), ProtocolError> {
        if self.events.windows(2).any(|w| w[1].seq <= w[0].seq) {
            return Err(ProtocolError::invalid("events", "not ordered by seq"));
        }
        if let Some(last) = self.events.last() {
            if self.next_since < last.seq {
                return Err(ProtocolError::invalid("next_since", "behind last event"));
            }
        }
        Ok(())
    }
}

/// Body of a joint-target symbol update, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JogTargetMsg {
    pub joints: [f64; JOINTS],
}

impl WireMessage for JogTargetMsg {
    const FIELDS: &'static [&'static str] = &["joints"];

    fn validate(&self) -> Result<(), ProtocolError> {
        finite_joints("joints", &self.joints)
    }
}

/// Body of a digital-output write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoSetMsg {
    pub value: u8,
}

impl WireMessage for IoSetMsg {
    const FIELDS: &'static [&'static str] = &["value"];

    fn validate(&self) -> Result<(), ProtocolError> {
        if self.value > 1 {
            return Err(ProtocolError::invalid("value", "must be 0 or 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AckMsg {
    pub status: String,
}

impl AckMsg {
    pub fn ok() -> Self {
        Self {
            status: "ok".into(),
        }
    }
}

/// Error body returned with every non-2xx controller response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMsg {
    pub code: String,
    pub message: String,
    /// 1-based joint index for limit violations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<usize>,
}

impl ErrorMsg {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            joint: None,
        }
    }
}

fn finite_joints(field: &str, joints: &[f64; JOINTS]) -> Result<(), ProtocolError> {
    match joints.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(ProtocolError::invalid(
            field,
            format!("joint {} is not finite", i + 1),
        )),
        None => Ok(()),
    }
}
