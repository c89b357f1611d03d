use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::kinematics::{JointConfig, Pose};

pub const CSV_HEADER: &str = "t_ms,j1,j2,j3,j4,j5,j6,x,y,z,qw,qx,qy,qz";

/// Accepted joints sample with its forward-kinematics pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t_ms: u64,
    pub seq: u64,
    pub q: JointConfig,
    pub pose: Pose,
}

/// Accepted robtarget sample as served by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcpRow {
    pub t_ms: u64,
    pub seq: u64,
    pub pose: Pose,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecorder {
    recording: bool,
    joints: Vec<TrajectoryRow>,
    tcp: Vec<TcpRow>,
}

impl TrajectoryRecorder {
    pub fn start(&mut self) {
        self.joints.clear();
        self.tcp.clear();
        self.recording = true;
    }

    pub fn stop(&mut self) {
        self.recording = false;
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn push_joints(&mut self, row: TrajectoryRow) {
        if self.recording {
            self.joints.push(row);
        }
    }

    pub fn push_tcp(&mut self, row: TcpRow) {
        if self.recording {
            self.tcp.push(row);
        }
    }

    pub fn joints(&self) -> &[TrajectoryRow] {
        &self.joints
    }

    pub fn tcp(&self) -> &[TcpRow] {
        &self.tcp
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.joints)
    }
}

/// Joint angles in degrees, positions in mm, quaternion w-first.
pub fn rows_to_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 160 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let d = r.q.to_degrees();
        let p = r.pose.position;
        let w = r.pose.quat_wxyz();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t_ms, d[0], d[1], d[2], d[3], d[4], d[5], p.x, p.y, p.z, w[0], w[1], w[2], w[3]
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_kinematics, DhTable};

    #[test]
    fn csv_header_and_units() {
        let dh = DhTable::irb120();
        let q = JointConfig::from_degrees([10.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut rec = TrajectoryRecorder::default();
        rec.push_joints(TrajectoryRow {
            t_ms: 1,
            seq: 1,
            q,
            pose: forward_kinematics(&dh, &q).unwrap(),
        });
        assert!(rec.joints().is_empty());
        rec.start();
        rec.push_joints(TrajectoryRow {
            t_ms: 7,
            seq: 2,
            q,
            pose: forward_kinematics(&dh, &q).unwrap(),
        });
        let csv = rec.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let fields: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|f| f.parse().unwrap())
            .collect();
        assert_eq!(fields.len(), 14);
        assert_eq!(fields[0], 7.0);
        assert!((fields[1] - 10.0).abs() < 1e-12);
        let r = (fields[7].powi(2) + fields[8].powi(2)).sqrt();
        assert!((r - 374.0).abs() < 1e-9);
    }
}
