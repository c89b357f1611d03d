//! Wire contract shared by the controller emulator and its clients:
//! resource paths, JSON payloads and HTTP digest authentication.
//!
//! Joint values travel in degrees and quaternions are w-first. Conversion to
//! the radian-based [`crate::kinematics`] types happens only here.

pub mod digest;
mod messages;
pub mod paths;

pub use digest::{
    digest_client_sign, AuthFailure, Challenge, DigestAuthorization, DigestCredentials,
    DigestSession, DigestVerifier,
};
pub use messages::*;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed payload at line {line} column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("unsupported {0}")]
    Unsupported(String),
}

impl ProtocolError {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Self::InvalidField {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// The field a decode error points at, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            Self::MissingField(f) | Self::InvalidField { field: f, .. } => Some(f),
            _ => None,
        }
    }
}

impl From<serde_json::Error> for ProtocolError {
    fn from(e: serde_json::Error) -> Self {
        Self::Malformed {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
