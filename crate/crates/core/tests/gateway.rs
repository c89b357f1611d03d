mod common;

use std::sync::Arc;
use std::time::Duration;

use rwstwin::gateway::{
    GatewayError, JogCommand, JogMode, LinearCommand, MotionGateway, SolverClient, SolverReply,
    SolverRequest, SolverService, TicketStatus, WirePose,
};
use rwstwin::kinematics::{forward_kinematics, solve_ik, IkProblem, JointConfig, SolverSettings};
use rwstwin::wire::paths::ExecutionAction;

async fn setup() -> (rwstwin::emulator::EmulatorHandle, MotionGateway) {
    let cfg = common::fast_config();
    let emu = common::emulator(&cfg).await;
    let twin = Arc::new(common::twin_for(&emu, &cfg).await);
    let gw = MotionGateway::new(twin, SolverSettings::default()).unwrap();
    (emu, gw)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn relative_jog_settles() {
    let (emu, gw) = setup().await;
    let t = gw
        .jog(JogCommand { mode: JogMode::Relative, joints: [10.0, 0.0, 0.0, 0.0, 0.0, 0.0] })
        .await
        .unwrap();
    let done = gw.wait(t.id, Duration::from_secs(3)).await.unwrap();
    assert_eq!(done.status, TicketStatus::Done, "{done:?}");
    let q = gw.twin().store().joints().unwrap().value.to_degrees();
    assert!((q[0] - 10.0).abs() <= 0.05);

    let t = gw
        .jog(JogCommand { mode: JogMode::Absolute, joints: [10.0, 0.0, 0.0, 0.0, 0.0, 0.0] })
        .await
        .unwrap();
    let done = gw.wait(t.id, Duration::from_secs(1)).await.unwrap();
    assert_eq!(done.status, TicketStatus::Done);
    emu.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn jog_limit_rejected_before_sending() {
    let (emu, gw) = setup().await;
    let err = gw
        .jog(JogCommand { mode: JogMode::Absolute, joints: [0.0, 0.0, 90.0, 0.0, 0.0, 0.0] })
        .await
        .unwrap_err();
    assert!(matches!(err, GatewayError::JointLimit { joint: 3, .. }), "{err}");
    assert_eq!(emu.snapshot().q, JointConfig::HOME);
    emu.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn jog_while_cycle_runs_is_busy() {
    let (emu, gw) = setup().await;
    gw.pointer_op(ExecutionAction::Resetpp).await.unwrap();
    gw.pointer_op(ExecutionAction::Start).await.unwrap();
    let err = gw.pointer_op(ExecutionAction::Start).await.unwrap_err();
    assert!(matches!(err, GatewayError::Conflict(_)), "{err}");
    let err = gw
        .jog(JogCommand { mode: JogMode::Absolute, joints: [5.0, 0.0, 0.0, 0.0, 0.0, 0.0] })
        .await
        .unwrap_err();
    assert!(matches!(err, GatewayError::Busy(_)), "{err}");
    emu.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn linear_hundred_mm_along_x() {
    let (emu, gw) = setup().await;
    let t = gw.linear_move(LinearCommand::new(100.0, 0.0, 0.0)).await.unwrap();
    let ik = t.ik.clone().unwrap();
    assert!(ik.converged && ik.pos_err_mm <= 0.01);
    let done = gw.wait(t.id, Duration::from_secs(5)).await.unwrap();
    assert_eq!(done.status, TicketStatus::Done, "{done:?}");
    let snap = emu
        .wait_for(Duration::from_secs(1), |s| {
            s.q == JointConfig::from_degrees(ik.solution_deg)
        })
        .await
        .unwrap();
    let err = (snap.pose.position - nalgebra::Vector3::new(474.0, 0.0, 630.0)).norm();
    assert!(err <= 0.01, "{err}");
    emu.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn linear_out_of_reach_is_rejected() {
    let (emu, gw) = setup().await;
    let err = gw.linear_move(LinearCommand::new(290.0, 0.0, 0.0)).await.unwrap_err();
    assert!(matches!(err, GatewayError::Unreachable { .. }), "{err}");
    assert_eq!(err.http_status(), 422);
    let err = gw.linear_move(LinearCommand::new(400.0, 0.0, 0.0)).await.unwrap_err();
    assert!(matches!(err, GatewayError::Invalid { .. }), "{err}");
    assert_eq!(emu.snapshot().q, JointConfig::HOME);
    emu.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn set_do_round_trip() {
    let (emu, gw) = setup().await;
    gw.set_do("DO_7", 1).await.unwrap();
    let ok = tokio::time::timeout(Duration::from_secs(2), async {
        loop {
            if gw.twin().store().io().is_some_and(|io| io.is_high("DO_7")) {
                break;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    })
    .await;
    assert!(ok.is_ok());
    let err = gw.set_do("DI_IR", 1).await.unwrap_err();
    assert_eq!(err.http_status(), 403);
    emu.shutdown().await;
}

#[tokio::test]
async fn solver_socket_matches_in_process() {
    let dh = rwstwin::kinematics::DhTable::irb120();
    let svc = SolverService::bind("127.0.0.1:0".parse().unwrap(), dh.clone(), SolverSettings::default())
        .await
        .unwrap();
    let mut c = SolverClient::connect(svc.addr()).await.unwrap();
    let home = forward_kinematics(&dh, &JointConfig::HOME).unwrap();
    let target = home.translated(nalgebra::Vector3::new(100.0, 0.0, 0.0));
    let reply = c
        .request(&SolverRequest::Solve { target: WirePose::from(&target), seed: [0.0; 6] })
        .await
        .unwrap();
    let SolverReply::Solve(r) = reply else { panic!("{reply:?}") };
    let wire_target = rwstwin::kinematics::Pose::from_wxyz(WirePose::from(&target).pos, WirePose::from(&target).quat).unwrap();
    let local = solve_ik(&dh, &IkProblem::with_defaults(wire_target, JointConfig::HOME)).unwrap();
    assert_eq!(r.solution, local.solution.to_degrees());
    assert!(r.converged);

    let reply = c.send_raw("not json").await.unwrap();
    assert!(matches!(reply, SolverReply::Error(ref e) if e.column.is_some()), "{reply:?}");
    let reply = c.request(&SolverRequest::Fk { fk: [0.0; 6] }).await.unwrap();
    assert!(matches!(reply, SolverReply::Fk(_)));
    svc.shutdown().await;
}
