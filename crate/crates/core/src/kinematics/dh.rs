use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{JointConfig, KinematicsError, Matrix6, Pose, JOINTS};

/// One link of a standard (distal) DH chain: `Rz(theta) Tz(d) Tx(a) Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    /// Added to the joint variable, radians.
    pub theta_offset: f64,
    /// mm
    pub d: f64,
    /// mm
    pub a: f64,
    /// radians
    pub alpha: f64,
}

impl DhRow {
    pub const fn new(theta_offset: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self {
            theta_offset,
            d,
            a,
            alpha,
        }
    }

    pub fn transform(&self, q: f64) -> Isometry3<f64> {
        let theta = q + self.theta_offset;
        let (s, c) = theta.sin_cos();
        let rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta)
            * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha);
        Isometry3::from_parts(
            Translation3::new(self.a * c, self.a * s, self.d),
            rotation,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, q: f64) -> bool {
        q >= self.min && q <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawDhTable {
    rows: Vec<DhRow>,
    joint_limits: Vec<JointLimit>,
    joint_speed_limits: Vec<f64>,
}

/// DH chain plus joint position and speed limits (rad, rad/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDhTable", into = "RawDhTable")]
pub struct DhTable {
    rows: [DhRow; JOINTS],
    limits: [JointLimit; JOINTS],
    speed_limits: [f64; JOINTS],
}

impl TryFrom<RawDhTable> for DhTable {
    type Error = KinematicsError;

    fn try_from(raw: RawDhTable) -> Result<Self, Self::Error> {
        let rows: [DhRow; JOINTS] = raw.rows.try_into().map_err(|v: Vec<DhRow>| {
            KinematicsError::InvalidTable(format!("expected 6 rows, got {}", v.len()))
        })?;
        let limits: [JointLimit; JOINTS] =
            raw.joint_limits.try_into().map_err(|v: Vec<JointLimit>| {
                KinematicsError::InvalidTable(format!("expected 6 joint limits, got {}", v.len()))
            })?;
        let speed_limits: [f64; JOINTS] =
            raw.joint_speed_limits.try_into().map_err(|v: Vec<f64>| {
                KinematicsError::InvalidTable(format!("expected 6 speed limits, got {}", v.len()))
            })?;
        DhTable::new(rows, limits, speed_limits)
    }
}

impl From<DhTable> for RawDhTable {
    fn from(t: DhTable) -> Self {
        Self {
            rows: t.rows.to_vec(),
            joint_limits: t.limits.to_vec(),
            joint_speed_limits: t.speed_limits.to_vec(),
        }
    }
}

impl Default for DhTable {
    fn default() -> Self {
        Self::irb120()
    }
}

impl DhTable {
    pub fn new(
        rows: [DhRow; JOINTS],
        limits: [JointLimit; JOINTS],
        speed_limits: [f64; JOINTS],
    ) -> Result<Self, KinematicsError> {
        for (i, r) in rows.iter().enumerate() {
            if ![r.theta_offset, r.d, r.a, r.alpha].iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::InvalidTable(format!(
                    "row {} has non-finite entries",
                    i + 1
                )));
            }
        }
        for (i, l) in limits.iter().enumerate() {
            if !(l.min.is_finite() && l.max.is_finite() && l.min < l.max) {
                return Err(KinematicsError::InvalidTable(format!(
                    "joint {} limits must satisfy min < max",
                    i + 1
                )));
            }
        }
        for (i, v) in speed_limits.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(KinematicsError::InvalidTable(format!(
                    "joint {} speed limit must be positive",
                    i + 1
                )));
            }
        }
        Ok(Self {
            rows,
            limits,
            speed_limits,
        })
    }

    /// ABB IRB120 with its datasheet axis ranges and speeds.
    pub fn irb120() -> Self {
        let deg = f64::to_radians;
        Self {
            rows: [
                DhRow::new(0.0, 290.0, 0.0, -FRAC_PI_2),
                DhRow::new(-FRAC_PI_2, 0.0, 270.0, 0.0),
                DhRow::new(0.0, 0.0, 70.0, -FRAC_PI_2),
                DhRow::new(0.0, 302.0, 0.0, FRAC_PI_2),
                DhRow::new(0.0, 0.0, 0.0, -FRAC_PI_2),
                DhRow::new(PI, 72.0, 0.0, 0.0),
            ],
            limits: [
                JointLimit::new(deg(-165.0), deg(165.0)),
                JointLimit::new(deg(-110.0), deg(110.0)),
                JointLimit::new(deg(-110.0), deg(70.0)),
                JointLimit::new(deg(-160.0), deg(160.0)),
                JointLimit::new(deg(-120.0), deg(120.0)),
                JointLimit::new(deg(-400.0), deg(400.0)),
            ],
            speed_limits: [250.0, 250.0, 250.0, 320.0, 320.0, 420.0].map(deg),
        }
    }

    pub fn rows(&self) -> &[DhRow; JOINTS] {
        &self.rows
    }

    pub fn limits(&self) -> &[JointLimit; JOINTS] {
        &self.limits
    }

    pub fn speed_limits(&self) -> &[f64; JOINTS] {
        &self.speed_limits
    }

    /// First joint (0-based) outside its limits.
    pub fn limit_violation(&self, q: &JointConfig) -> Option<usize> {
        q.0.iter()
            .zip(self.limits.iter())
            .position(|(v, l)| !l.contains(*v))
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        self.limit_violation(q).is_none()
    }

    pub fn clamp(&self, q: &JointConfig) -> JointConfig {
        let mut out = q.0;
        for (v, l) in out.iter_mut().zip(self.limits.iter()) {
            *v = v.clamp(l.min, l.max);
        }
        JointConfig(out)
    }
}

/// Base frame followed by the frame of every link, 7 in total.
pub fn link_frames(
    dh: &DhTable,
    q: &JointConfig,
) -> Result<[Isometry3<f64>; JOINTS + 1], KinematicsError> {
    q.ensure_finite()?;
    let mut frames = [Isometry3::identity(); JOINTS + 1];
    for i in 0..JOINTS {
        frames[i + 1] = frames[i] * dh.rows[i].transform(q.0[i]);
    }
    Ok(frames)
}

pub fn forward_kinematics(dh: &DhTable, q: &JointConfig) -> Result<Pose, KinematicsError> {
    let frames = link_frames(dh, q)?;
    Ok(Pose::from_isometry(&frames[JOINTS]))
}

/// Geometric Jacobian in the base frame.
///
/// Rows 0..3 are TCP linear velocity (mm/s), rows 3..6 angular velocity
/// (rad/s), matching the row order of [`super::task_residual`].
pub fn jacobian(dh: &DhTable, q: &JointConfig) -> Result<Matrix6, KinematicsError> {
    let frames = link_frames(dh, q)?;
    let tcp = frames[JOINTS].translation.vector;
    let mut jac = Matrix6::zeros();
    for i in 0..JOINTS {
        let axis = frames[i].rotation * Vector3::z();
        let origin = frames[i].translation.vector;
        let linear = axis.cross(&(tcp - origin));
        for r in 0..3 {
            jac[(r, i)] = linear[r];
            jac[(r + 3, i)] = axis[r];
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn home_position() {
        let p = forward_kinematics(&DhTable::irb120(), &JointConfig::HOME).unwrap();
        assert!(close(p.position.x, 374.0, 1e-9));
        assert!(close(p.position.y, 0.0, 1e-9));
        assert!(close(p.position.z, 630.0, 1e-9));
    }

    #[test]
    fn joint_one_quarter_turn() {
        let q = JointConfig::new([FRAC_PI_2, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let p = forward_kinematics(&DhTable::irb120(), &q).unwrap();
        assert!(close(p.position.x, 0.0, 1e-9));
        assert!(close(p.position.y, 374.0, 1e-9));
        assert!(close(p.position.z, 630.0, 1e-9));
    }

    #[test]
    fn non_finite_rejected() {
        let q = JointConfig::new([0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0]);
        let err = forward_kinematics(&DhTable::irb120(), &q).unwrap_err();
        assert!(matches!(err, KinematicsError::InvalidArgument(_)));
        assert!(jacobian(&DhTable::irb120(), &q).is_err());
    }

    #[test]
    fn joint_one_linear_rate_at_home() {
        let j = jacobian(&DhTable::irb120(), &JointConfig::HOME).unwrap();
        assert!(close(j[(0, 0)], 0.0, 1e-9));
        assert!(close(j[(1, 0)], 374.0, 1e-9));
        assert!(close(j[(2, 0)], 0.0, 1e-9));
    }

    #[test]
    fn wrist_singularity_drops_rank() {
        let q = JointConfig::new([0.2, -0.3, 0.4, 0.5, 0.0, -0.6]);
        let j = jacobian(&DhTable::irb120(), &q).unwrap();
        let sv = j.singular_values();
        assert!(sv.min() <= 1e-8 * sv.max(), "{sv:?}");
    }

    #[test]
    fn table_validation() {
        let t = DhTable::irb120();
        let mut limits = *t.limits();
        limits[2] = JointLimit::new(1.0, 1.0);
        assert!(DhTable::new(*t.rows(), limits, *t.speed_limits()).is_err());
        let mut speeds = *t.speed_limits();
        speeds[5] = 0.0;
        assert!(DhTable::new(*t.rows(), *t.limits(), speeds).is_err());

        let raw = RawDhTable {
            rows: t.rows().to_vec()[..5].to_vec(),
            joint_limits: t.limits().to_vec(),
            joint_speed_limits: t.speed_limits().to_vec(),
        };
        assert!(DhTable::try_from(raw).is_err());
    }

    #[test]
    fn limits_and_clamp() {
        let t = DhTable::irb120();
        let q = JointConfig::from_degrees([200.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.limit_violation(&q), Some(0));
        let c = t.clamp(&q);
        assert!(t.within_limits(&c));
        assert!(close(c.0[0], 165f64.to_radians(), 1e-12));
    }
}
