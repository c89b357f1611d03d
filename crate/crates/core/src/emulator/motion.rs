//! MoveAbsJ execution with synchronized, velocity-limited joint interpolation.

use std::collections::VecDeque;

use crate::kinematics::{JointConfig, JOINTS};

/// One queued absolute joint move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveAbsJ {
    pub target: JointConfig,
    /// Fraction of the joint speed limits used for this move, in (0, 1].
    pub speed: f64,
}

#[derive(Debug, Clone)]
struct ActiveMove {
    start: JointConfig,
    target: JointConfig,
    duration_s: f64,
    ticks: u64,
}

/// Plays queued moves in FIFO order, one tick at a time.
///
/// Every joint of a move starts and stops together: the move lasts as long
/// as its slowest joint needs at full (scaled) speed, and each joint runs at
/// a constant rate over that interval.
#[derive(Debug, Clone)]
pub struct MotionExecutor {
    current: JointConfig,
    pending: VecDeque<MoveAbsJ>,
    active: Option<ActiveMove>,
    tick_s: f64,
    speed_limits: [f64; JOINTS],
}

impl MotionExecutor {
    pub fn new(start: JointConfig, tick_rate_hz: f64, speed_limits: [f64; JOINTS]) -> Self {
        Self {
            current: start,
            pending: VecDeque::new(),
            active: None,
            tick_s: 1.0 / tick_rate_hz,
            speed_limits,
        }
    }

    pub fn current(&self) -> JointConfig {
        self.current
    }

    pub fn tick_s(&self) -> f64 {
        self.tick_s
    }

    pub fn speed_limits(&self) -> &[f64; JOINTS] {
        &self.speed_limits
    }

    pub fn enqueue(&mut self, mv: MoveAbsJ) {
        self.pending.push_back(mv);
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_none() && self.pending.is_empty()
    }

    pub fn queued(&self) -> usize {
        self.pending.len() + usize::from(self.active.is_some())
    }

    /// Drops queued and in-flight moves; the arm halts where it is.
    pub fn clear(&mut self) {
        self.pending.clear();
        self.active = None;
    }

    /// Time the slowest joint needs for `from -> to` at `speed` times the limits.
    pub fn move_duration(&self, from: &JointConfig, to: &JointConfig, speed: f64) -> f64 {
        from.0
            .iter()
            .zip(to.0.iter())
            .zip(self.speed_limits.iter())
            .map(|((a, b), v)| (b - a).abs() / (v * speed))
            .fold(0.0, f64::max)
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        if self.active.is_none() {
            let Some(next) = self.pending.pop_front() else {
                return;
            };
            let speed = next.speed.clamp(1e-6, 1.0);
            let duration_s = self.move_duration(&self.current, &next.target, speed);
            if duration_s == 0.0 {
                self.current = next.target;
                return;
            }
            self.active = Some(ActiveMove {
                start: self.current,
                target: next.target,
                duration_s,
                ticks: 0,
            });
        }
        let mv = self.active.as_mut().expect("active move set above");
        mv.ticks += 1;
        let s = (mv.ticks as f64 * self.tick_s / mv.duration_s).min(1.0);
        if s >= 1.0 {
            self.current = mv.target;
            self.active = None;
        } else {
            let mut q = [0.0; JOINTS];
            for (i, v) in q.iter_mut().enumerate() {
                *v = mv.start.0[i] + (mv.target.0[i] - mv.start.0[i]) * s;
            }
            self.current = JointConfig(q);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::DhTable;

    fn executor() -> MotionExecutor {
        MotionExecutor::new(JointConfig::HOME, 250.0, *DhTable::irb120().speed_limits())
    }

    #[test]
    fn ten_degrees_on_joint_one() {
        let mut ex = executor();
        let target = JointConfig::from_degrees([10.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        ex.enqueue(MoveAbsJ { target, speed: 1.0 });
        let mut prev = ex.current();
        let mut ticks = 0;
        while !ex.is_idle() {
            ex.step();
            ticks += 1;
            let d = ex.current().max_abs_diff(&prev);
            assert!(d <= 1f64.to_radians() + 1e-12, "tick delta {d}");
            prev = ex.current();
        }
        // 10 deg at 250 deg/s is 40 ms; allow one extra 4 ms tick.
        assert!(ticks as f64 * 0.004 <= 0.04 + 0.004 + 1e-12, "{ticks} ticks");
        assert_eq!(ex.current(), target);
    }

    #[test]
    fn joints_arrive_together() {
        let mut ex = executor();
        let target = JointConfig::from_degrees([30.0, -10.0, 5.0, 90.0, 0.0, 0.0]);
        ex.enqueue(MoveAbsJ { target, speed: 0.5 });
        let start = ex.current();
        for _ in 0..10 {
            ex.step();
        }
        let q = ex.current();
        let fractions: Vec<f64> = (0..JOINTS)
            .filter(|&i| target.0[i] != start.0[i])
            .map(|i| (q.0[i] - start.0[i]) / (target.0[i] - start.0[i]))
            .collect();
        assert!(fractions.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    #[test]
    fn identity_move_settles_immediately() {
        let mut ex = executor();
        ex.enqueue(MoveAbsJ {
            target: JointConfig::HOME,
            speed: 1.0,
        });
        ex.step();
        assert!(ex.is_idle());
        assert_eq!(ex.current(), JointConfig::HOME);
    }

    #[test]
    fn fifo_order() {
        let mut ex = executor();
        let a = JointConfig::from_degrees([5.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = JointConfig::from_degrees([5.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
        ex.enqueue(MoveAbsJ { target: a, speed: 1.0 });
        ex.enqueue(MoveAbsJ { target: b, speed: 1.0 });
        let mut reached_a_first = false;
        while !ex.is_idle() {
            ex.step();
            if ex.current() == a {
                reached_a_first = true;
            }
            if !reached_a_first {
                assert_eq!(ex.current().0[1], 0.0);
            }
        }
        assert!(reached_a_first);
        assert_eq!(ex.current(), b);
    }
}
