mod common;

use std::time::Duration;

use reqwest::StatusCode;
use rwstwin::emulator::{CyclePhase, Resource, SimCommand};
use rwstwin::twin::{ConnectionState, RwsClient, StreamKind};
use rwstwin::wire::paths::{self, ExecutionAction};
use rwstwin::wire::{Challenge, IoSetMsg, IoSnapshotMsg, JogTargetMsg, JointTargetMsg, RobTargetMsg};

#[tokio::test]
async fn unauthenticated_get_is_challenged() {
    let cfg = common::fast_config();
    let emu = common::emulator(&cfg).await;
    let resp = reqwest::Client::builder()
        .no_proxy()
        .build()
        .unwrap()
        .get(format!("{}{}", emu.base_url(), paths::JOINTTARGET))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let header = resp.headers()["www-authenticate"].to_str().unwrap().to_string();
    let ch = Challenge::parse(&header).unwrap();
    assert_eq!(ch.realm, cfg.credentials.realm);
    assert!(!ch.stale);
    emu.shutdown().await;
}

#[tokio::test]
async fn signed_reads_and_gapless_seq() {
    let cfg = common::fast_config();
    let emu = common::emulator(&cfg).await;
    let c = RwsClient::new(&emu.base_url(), cfg.credentials.clone(), 9).unwrap();
    let mut last = 0;
    for _ in 0..5 {
        let m: JointTargetMsg = c.get(paths::JOINTTARGET).await.unwrap();
        assert_eq!(m.seq, last + 1);
        last = m.seq;
        assert_eq!(m.joints, [0.0; 6]);
    }
    let t: RobTargetMsg = c.get(paths::ROBTARGET).await.unwrap();
    let p = t.to_pose().unwrap();
    assert!((p.position - nalgebra::Vector3::new(374.0, 0.0, 630.0)).norm() < 1e-9);
    let io: IoSnapshotMsg = c.get(paths::IO_SIGNALS).await.unwrap();
    assert!(io.value("DO_3").is_some());
    assert_eq!(emu.served(Resource::JointTarget), 5);
    emu.shutdown().await;
}

#[tokio::test]
async fn wrong_password_is_an_auth_error() {
    let cfg = common::fast_config();
    let emu = common::emulator(&cfg).await;
    let mut creds = cfg.credentials.clone();
    creds.password = "nope".into();
    let c = RwsClient::new(&emu.base_url(), creds, 1).unwrap();
    let err = c.get::<JointTargetMsg>(paths::JOINTTARGET).await.unwrap_err();
    assert!(matches!(err, rwstwin::twin::ClientError::Auth(_)), "{err}");
    emu.shutdown().await;
}

#[tokio::test]
async fn control_endpoints() {
    let cfg = common::fast_config();
    let emu = common::emulator(&cfg).await;
    let c = RwsClient::new(&emu.base_url(), cfg.credentials.clone(), 2).unwrap();

    let err = c
        .post(&paths::symbol_update_uri(), Some(&JogTargetMsg { joints: [200.0, 0.0, 0.0, 0.0, 0.0, 0.0] }))
        .await
        .unwrap_err();
    match err {
        rwstwin::twin::ClientError::Rejected { status, body } => {
            assert_eq!(status, 400);
            assert_eq!(body.joint, Some(1));
        }
        other => panic!("{other}"),
    }

    c.post(&paths::io_set_uri("DO_7"), Some(&IoSetMsg { value: 1 })).await.unwrap();
    let io: IoSnapshotMsg = c.get(paths::IO_SIGNALS).await.unwrap();
    assert_eq!(io.value("DO_7"), Some(1));

    let status = |e: rwstwin::twin::ClientError| match e {
        rwstwin::twin::ClientError::Rejected { status, .. } => status,
        other => panic!("{other}"),
    };
    let e = c.post(&paths::io_set_uri("DI_IR"), Some(&IoSetMsg { value: 1 })).await.unwrap_err();
    assert_eq!(status(e), 403);
    let e = c.post(&paths::io_set_uri("DO_99"), Some(&IoSetMsg { value: 1 })).await.unwrap_err();
    assert_eq!(status(e), 404);

    c.post::<()>(&paths::execution_uri(ExecutionAction::Resetpp), None).await.unwrap();
    c.post::<()>(&paths::execution_uri(ExecutionAction::Start), None).await.unwrap();
    let e = c.post::<()>(&paths::execution_uri(ExecutionAction::Start), None).await.unwrap_err();
    assert_eq!(status(e), 409);
    assert!(emu
        .wait_for(Duration::from_secs(1), |s| s.rapid.cycle_phase != CyclePhase::Idle)
        .await
        .is_some());
    let e = c
        .post(&paths::symbol_update_uri(), Some(&JogTargetMsg { joints: [0.0; 6] }))
        .await
        .unwrap_err();
    assert_eq!(status(e), 409);
    emu.shutdown().await;
}

#[tokio::test]
async fn jog_reaches_target_in_rate_limited_time() {
    let cfg = common::fast_config();
    let emu = common::emulator(&cfg).await;
    let start = std::time::Instant::now();
    emu.command(SimCommand::JointTarget([10.0, 0.0, 0.0, 0.0, 0.0, 0.0])).await.unwrap();
    let target = rwstwin::kinematics::JointConfig::from_degrees([10.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let snap = emu.wait_for(Duration::from_secs(2), |s| s.q == target).await.unwrap();
    assert!(start.elapsed() < Duration::from_millis(200));
    assert_eq!(snap.q, target);
    emu.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn twin_tracks_and_detects_outage() {
    let cfg = common::fast_config();
    let emu = common::emulator(&cfg).await;
    let addr = emu.addr();
    let twin = common::twin_for(&emu, &cfg).await;
    emu.command(SimCommand::JointTarget([20.0, 0.0, 0.0, 0.0, 0.0, 0.0])).await.unwrap();
    let target = rwstwin::kinematics::JointConfig::from_degrees([20.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(twin.wait_joints(Duration::from_secs(2), |s| s.value == target).await.is_some());

    emu.shutdown().await;
    let t0 = std::time::Instant::now();
    while twin.store().connection().state != ConnectionState::Down {
        assert!(t0.elapsed() < Duration::from_secs(3), "never went down");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }

    let mut cfg2 = cfg.clone();
    cfg2.emulator.seed = 77;
    let emu2 = rwstwin::emulator::EmulatorServer::from_config(&cfg2)
        .unwrap()
        .spawn(addr)
        .await
        .unwrap();
    let t0 = std::time::Instant::now();
    while twin.store().connection().state != ConnectionState::Up {
        assert!(t0.elapsed() < Duration::from_secs(6), "never recovered");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let stats = twin.store().refresh_stats();
    assert!(stats.stream(StreamKind::Joints).is_some());
    twin.shutdown().await;
    emu2.shutdown().await;
}
