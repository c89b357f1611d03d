mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rwstwin::gateway::MotionGateway;
use rwstwin::kinematics::SolverSettings;
use rwstwin::proxy::{serve, AggregateStateView, ProxyConfig, ProxyHandle};
use serde_json::{json, Value};

async fn setup() -> (rwstwin::emulator::EmulatorHandle, ProxyHandle, reqwest::Client) {
    let cfg = common::fast_config();
    let emu = common::emulator(&cfg).await;
    let twin = Arc::new(common::twin_for(&emu, &cfg).await);
    let gw = Arc::new(MotionGateway::new(twin, SolverSettings::default()).unwrap());
    let proxy = serve(gw, "127.0.0.1:0".parse().unwrap(), ProxyConfig::default())
        .await
        .unwrap();
    let http = reqwest::Client::builder().no_proxy().build().unwrap();
    (emu, proxy, http)
}

async fn state(http: &reqwest::Client, proxy: &ProxyHandle) -> AggregateStateView {
    http.get(format!("{}/api/state", proxy.base_url()))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap()
}

async fn command(http: &reqwest::Client, proxy: &ProxyHandle, body: Value) -> (u16, Value) {
    let r = http
        .post(format!("{}/api/command", proxy.base_url()))
        .json(&body)
        .send()
        .await
        .unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

async fn wait_ticket(http: &reqwest::Client, proxy: &ProxyHandle, id: u64) -> Value {
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let t: Value = http
            .get(format!("{}/api/ticket/{id}", proxy.base_url()))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        if t["status"] != "pending" || Instant::now() > deadline {
            return t;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

/// Reads SSE `data:` payloads for `window`.
async fn collect_sse(http: &reqwest::Client, proxy: &ProxyHandle, window: Duration) -> Vec<Value> {
    let mut resp = http
        .get(format!("{}/api/stream", proxy.base_url()))
        .send()
        .await
        .unwrap();
    assert_eq!(
        resp.headers()["content-type"].to_str().unwrap(),
        "text/event-stream"
    );
    let mut buf = String::new();
    let deadline = tokio::time::Instant::now() + window;
    while let Ok(Ok(Some(chunk))) = tokio::time::timeout_at(deadline, resp.chunk()).await {
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
    }
    buf.lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .filter_map(|d| serde_json::from_str(d).ok())
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn state_snapshot_and_credentials_stay_inside() {
    let (emu, proxy, http) = setup().await;
    let view = state(&http, &proxy).await;
    assert_eq!(view.connection.state, rwstwin::twin::ConnectionState::Up);
    assert!(view.io.as_ref().unwrap().signals.len() >= 6);
    let j = view.joints.unwrap();
    assert!(j.deg.iter().all(|d| d.abs() < 1e-9));
    assert!((view.tcp.unwrap().pos[0] - 374.0).abs() < 1e-6);

    let raw = http
        .get(format!("{}/api/state", proxy.base_url()))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert!(!raw.contains("robotics"));
    assert!(!raw.contains("Default User"));

    let r = http
        .get(format!("{}/api/state", proxy.base_url()))
        .header("Origin", "http://localhost:5173")
        .send()
        .await
        .unwrap();
    assert!(r.headers().contains_key("access-control-allow-origin"));

    emu.shutdown().await;
    tokio::time::sleep(Duration::from_millis(1500)).await;
    let r = http
        .get(format!("{}/api/state", proxy.base_url()))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 503);
    let body: Value = r.json().await.unwrap();
    assert!(body["error"].as_str().is_some_and(|s| !s.is_empty()));
    proxy.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn commands_and_tickets() {
    let (emu, proxy, http) = setup().await;

    let (status, body) =
        command(&http, &proxy, json!({"kind":"jog","mode":"absolute","joints":[0,0,90,0,0,0]})).await;
    assert_eq!(status, 400);
    assert_eq!(body["joint"], 3);

    let (status, body) = command(&http, &proxy, json!({"kind":"jog","mode":"relative"})).await;
    assert_eq!(status, 400);
    assert_eq!(body["field"], "joints");

    let (status, body) = command(&http, &proxy, json!({"kind":"teleport"})).await;
    assert_eq!(status, 400, "{body}");

    let (status, body) = command(&http, &proxy, json!({"kind":"linear","dx":100,"dy":0,"dz":0})).await;
    assert_eq!(status, 202, "{body}");
    let t = wait_ticket(&http, &proxy, body["id"].as_u64().unwrap()).await;
    assert_eq!(t["status"], "done", "{t}");
    tokio::time::sleep(Duration::from_millis(100)).await;
    let tcp = state(&http, &proxy).await.tcp.unwrap();
    assert!((tcp.pos[0] - 474.0).abs() <= 0.01, "{:?}", tcp.pos);

    let (status, body) = command(&http, &proxy, json!({"kind":"do","name":"DO_7","value":1})).await;
    assert_eq!(status, 202, "{body}");

    let r = http
        .get(format!("{}/api/ticket/999999", proxy.base_url()))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 404);

    let (status, _) = command(&http, &proxy, json!({"kind":"pointer","action":"resetpp"})).await;
    assert_eq!(status, 202);
    let (status, body) = command(&http, &proxy, json!({"kind":"pointer","action":"start"})).await;
    assert_eq!(status, 202, "{body}");
    tokio::time::sleep(Duration::from_millis(200)).await;
    let (status, body) =
        command(&http, &proxy, json!({"kind":"jog","mode":"relative","joints":[5,0,0,0,0,0]})).await;
    assert_eq!(status, 409, "{body}");

    proxy.shutdown().await;
    emu.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn stream_cadence_and_shared_sequence() {
    let (emu, proxy, http) = setup().await;
    let (status, _) =
        command(&http, &proxy, json!({"kind":"jog","mode":"absolute","joints":[60,0,0,0,0,0]})).await;
    assert_eq!(status, 202);

    let (a, b) = tokio::join!(
        collect_sse(&http, &proxy, Duration::from_secs(1)),
        collect_sse(&http, &proxy, Duration::from_secs(1))
    );
    assert!(a.len() >= 18, "only {} updates in 1 s", a.len());
    let first: AggregateStateView = serde_json::from_value(a[0].clone()).unwrap();
    assert!(first.joints.is_some());

    let seqs = |v: &[Value]| -> Vec<u64> {
        v.iter().map(|s| s["joints"]["seq"].as_u64().unwrap()).collect()
    };
    let (sa, sb) = (seqs(&a), seqs(&b));
    assert!(sa.windows(2).all(|w| w[0] <= w[1]));
    let common: Vec<u64> = sa.iter().copied().filter(|s| sb.contains(s)).collect();
    assert!(common.len() >= sa.len() - 2, "{sa:?} vs {sb:?}");

    proxy.shutdown().await;
    emu.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn metrics_camera_and_index() {
    let (emu, proxy, http) = setup().await;
    tokio::time::sleep(Duration::from_millis(2200)).await;
    let m: Value = http
        .get(format!("{}/api/metrics", proxy.base_url()))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let streams = m["streams"].as_array().unwrap();
    assert!(streams.len() >= 3);
    let joints = &streams[0]["windows"].as_array().unwrap();
    assert!(!joints.is_empty() && joints.len() <= 120);
    assert_eq!(joints[0]["warmup"], true);

    let r = http
        .get(format!("{}/api/camera.jpg", proxy.base_url()))
        .send()
        .await
        .unwrap();
    assert_eq!(r.headers()["content-type"], "image/jpeg");
    let bytes = r.bytes().await.unwrap();
    assert_eq!(&bytes[..2], &[0xFF, 0xD8]);

    let r = http.get(proxy.base_url()).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 200);

    proxy.shutdown().await;
    emu.shutdown().await;
}
