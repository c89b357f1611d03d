use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{KinematicsError, Vector6};

/// Unit-norm tolerance accepted when building a pose from raw components.
pub const QUATERNION_NORM_TOL: f64 = 1e-6;

/// TCP pose: position in mm, orientation as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPose {
    pos: [f64; 3],
    quat: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawPose {
            pos: self.position.into(),
            quat: self.quat_wxyz(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawPose::deserialize(d)?;
        Pose::from_wxyz(raw.pos, raw.quat).map_err(serde::de::Error::custom)
    }
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    /// Builds a pose from a w-first quaternion, rejecting non-unit input.
    pub fn from_wxyz(pos: [f64; 3], wxyz: [f64; 4]) -> Result<Self, KinematicsError> {
        if !pos.iter().chain(wxyz.iter()).all(|v| v.is_finite()) {
            return Err(KinematicsError::InvalidArgument(
                "pose has non-finite components".into(),
            ));
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
            return Err(KinematicsError::InvalidArgument(format!(
                "quaternion norm {norm} is not 1"
            )));
        }
        Ok(Self {
            position: Vector3::from(pos),
            orientation: UnitQuaternion::new_normalize(q),
        })
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            position: iso.translation.vector,
            orientation: iso.rotation,
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn translated(&self, delta: Vector3<f64>) -> Self {
        Self {
            position: self.position + delta,
            orientation: self.orientation,
        }
    }

    /// Euclidean distance between TCP positions, mm.
    pub fn position_error(&self, other: &Pose) -> f64 {
        (self.position - other.position).norm()
    }

    /// Angle of the relative rotation, radians.
    pub fn orientation_error(&self, other: &Pose) -> f64 {
        self.orientation.angle_to(&other.orientation)
    }
}

/// Stacked pose error: rows 0..3 `target - current` position (mm), rows 3..6
/// the rotation vector of `R_target * R_current^T` (rad).
pub fn task_residual(target: &Pose, current: &Pose) -> Vector6 {
    let dp = target.position - current.position;
    let dr = if target.orientation == current.orientation {
        Vector3::zeros()
    } else {
        (target.orientation * current.orientation.inverse()).scaled_axis()
    };
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}
