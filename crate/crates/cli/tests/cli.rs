use std::process::{Command, Output};

use rwstwin::config::Config;
use rwstwin::emulator::{EmulatorHandle, EmulatorServer};

fn rwstwin(args: &[&str], controller: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rwstwin"));
    cmd.args(args).env_remove("TWIN_CONTROLLER_URL");
    if let Some(url) = controller {
        cmd.env("TWIN_CONTROLLER_URL", url);
    }
    cmd.output().expect("binary runs")
}

async fn rwstwin_async(args: &'static [&'static str], controller: String) -> Output {
    tokio::task::spawn_blocking(move || rwstwin(args, Some(&controller)))
        .await
        .unwrap()
}

async fn emulator() -> EmulatorHandle {
    EmulatorServer::from_config(&Config::default())
        .unwrap()
        .spawn("127.0.0.1:0".parse().unwrap())
        .await
        .unwrap()
}

#[test]
fn ik_solve_example_converges() {
    let out = rwstwin(&["ik", "solve", "--target", "474,0,630,1,0,0,0", "--seed", "0,0,0,0,0,0"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("converged"));
}

#[test]
fn ik_solve_json_is_parseable() {
    let out = rwstwin(&["--json", "ik", "solve", "--target", "374,0,630,0,0,1,0"], None);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["converged"], true);
    assert_eq!(v["solution"].as_array().unwrap().len(), 6);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(rwstwin(&["--no-such-flag"], None).status.code(), Some(2));
    assert_eq!(rwstwin(&["twin", "jog"], None).status.code(), Some(2));
    assert_eq!(rwstwin(&["twin", "jog", "--relative", "1,2,3"], None).status.code(), Some(2));
    assert_eq!(rwstwin(&["ik", "solve", "--target", "1,2,x,1,0,0,0"], None).status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    assert_eq!(rwstwin(&["--help"], None).status.code(), Some(0));
}

#[test]
fn unreachable_controller_exits_one() {
    let out = rwstwin(&["twin", "pointer", "start"], Some("http://127.0.0.1:9"));
    assert_eq!(out.status.code(), Some(1));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn twin_commands_against_emulator() {
    let emu = emulator().await;
    let url = emu.base_url();

    let out = rwstwin_async(&["twin", "jog", "--relative", "10,0,0,0,0,0"], url.clone()).await;
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let q = emu.snapshot().q;
    assert!((q.0[0].to_degrees() - 10.0).abs() < 1e-9, "{q:?}");

    let out = rwstwin_async(&["--json", "twin", "linear", "--dz", "-20"], url.clone()).await;
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ticket: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(ticket["status"], "done");

    let out = rwstwin_async(&["twin", "do", "DO_NOPE", "1"], url.clone()).await;
    assert_eq!(out.status.code(), Some(1));

    let out = rwstwin_async(&["--json", "twin", "metrics", "--duration", "1.5"], url.clone()).await;
    assert_eq!(out.status.code(), Some(0));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!stats["streams"].as_array().unwrap().is_empty());

    emu.shutdown().await;
}

#[test]
fn protocol_bench_passes() {
    let out = rwstwin(&["bench", "protocol", "--cases", "300"], None);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("criterion 6 [PASS]"));
}

#[test]
fn shipped_config_matches_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../config/default.toml");
    assert_eq!(Config::load(path).unwrap(), Config::default());
    let out = rwstwin(&["--config", path, "ik", "solve", "--target", "474,0,630,1,0,0,0"], None);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(rwstwin(&["--config", "/nonexistent.toml", "ik", "solve", "--target", "474,0,630,1,0,0,0"], None).status.code(), Some(1));
}
