//! TOML configuration shared by every component.
//!
//! All sections are optional; missing keys fall back to the IRB120 workcell
//! defaults.
//!
//! ```toml
//! [solver]
//! tol_pos = 0.01
//!
//! [emulator]
//! camera_delay_ms = 150
//!
//! [credentials]
//! username = "Default User"
//! password = "robotics"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::emulator::{EmulatorSettings, WorkcellSettings};
use crate::kinematics::{DhTable, SolverSettings};
use crate::wire::DigestCredentials;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub robot: DhTable,
    pub solver: SolverSettings,
    pub credentials: DigestCredentials,
    pub emulator: EmulatorSettings,
    pub workcell: WorkcellSettings,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config always serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn partial_override() {
        let c = Config::from_toml_str("[solver]\ntol_pos = 0.5\n[emulator]\ncamera_delay_ms = 150\n")
            .unwrap();
        assert_eq!(c.solver.tol_pos, 0.5);
        assert_eq!(c.solver.max_iters, 200);
        assert_eq!(c.emulator.camera_delay_ms, 150);
    }

    #[test]
    fn roundtrip_through_toml() {
        let c = Config::default();
        let back = Config::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_dh_table_rejected() {
        let mut c = Config::default().to_toml_string();
        c = c.replacen("joint_speed_limits = [", "joint_speed_limits = [-1.0, ", 1);
        assert!(Config::from_toml_str(&c).is_err());
    }
}
