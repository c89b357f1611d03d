use rwstwin::kinematics::{solve_ik, DhTable};
use rwstwin::wire::{IoSnapshotMsg, JointTargetMsg, RobTargetMsg, WireMessage};
use rwstwin_bench::{ik_problems, io_message, joint_message, random_configs, robtarget_message};

#[test]
fn messages_round_trip() {
    let dh = DhTable::irb120();
    let j = joint_message();
    assert_eq!(JointTargetMsg::decode(&j.encode()).unwrap(), j);
    let r = robtarget_message(&dh);
    assert_eq!(RobTargetMsg::decode(&r.encode()).unwrap(), r);
    let io = io_message();
    assert_eq!(IoSnapshotMsg::decode(&io.encode()).unwrap(), io);
    assert_eq!(io.signals.len(), 64);
}

#[test]
fn fixtures_are_deterministic_and_in_limits() {
    let dh = DhTable::irb120();
    let a = random_configs(&dh, 50, 9);
    assert_eq!(a, random_configs(&dh, 50, 9));
    assert!(a.iter().all(|q| dh.within_limits(q)));
}

#[test]
fn ik_fixtures_mostly_converge() {
    let dh = DhTable::irb120();
    let problems = ik_problems(&dh, 64, 3);
    let converged = problems.iter().filter(|p| solve_ik(&dh, p).unwrap().converged).count();
    assert!(converged >= 60, "{converged}/64");
}
