//! Deterministic inputs shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwstwin::kinematics::{forward_kinematics, DhTable, IkProblem, JointConfig};
use rwstwin::wire::{IoSignal, IoSnapshotMsg, JointTargetMsg, RobTargetMsg, SignalKind, MANDATORY_SIGNALS};

/// `n` configurations drawn uniformly inside the joint limits.
pub fn random_configs(dh: &DhTable, n: usize, seed: u64) -> Vec<JointConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut q = [0.0; 6];
            for (v, l) in q.iter_mut().zip(dh.limits()) {
                *v = rng.random_range(l.min..=l.max);
            }
            JointConfig::new(q)
        })
        .collect()
}

/// Reachable targets with seeds 0.2 rad away from the generating configuration.
pub fn ik_problems(dh: &DhTable, n: usize, seed: u64) -> Vec<IkProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    random_configs(dh, n, seed)
        .into_iter()
        .map(|q| {
            let target = forward_kinematics(dh, &q).expect("finite config");
            let mut s = q.0;
            for v in &mut s {
                *v += rng.random_range(-0.2..=0.2);
            }
            IkProblem::with_defaults(target, dh.clamp(&JointConfig::new(s)))
        })
        .collect()
}

pub fn joint_message() -> JointTargetMsg {
    JointTargetMsg::from_config(&JointConfig::new([0.1, -0.4, 0.7, 1.2, -0.3, 2.0]), 4711, 1_792_000_000_000)
}

pub fn robtarget_message(dh: &DhTable) -> RobTargetMsg {
    let pose = forward_kinematics(dh, &JointConfig::new([0.1, -0.4, 0.7, 1.2, -0.3, 2.0])).expect("finite");
    RobTargetMsg::from_pose(&pose, 4711, 1_792_000_000_000)
}

/// The mandatory signals plus 58 generic outputs.
pub fn io_message() -> IoSnapshotMsg {
    let names = MANDATORY_SIGNALS
        .iter()
        .map(|n| n.to_string())
        .chain((0..58).map(|i| format!("DO_GEN_{i:02}")));
    let signals = names
        .enumerate()
        .map(|(i, name)| IoSignal {
            kind: if name.starts_with("DI_") { SignalKind::DI } else { SignalKind::DO },
            name,
            value: u8::from(i % 3 == 0),
        })
        .collect();
    IoSnapshotMsg { signals, seq: 99, timestamp_ms: 1_792_000_000_000 }
}
