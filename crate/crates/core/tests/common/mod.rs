#![allow(dead_code)]

use std::time::Duration;

use rwstwin::config::Config;
use rwstwin::emulator::{EmulatorHandle, EmulatorServer, ServiceTimes};
use rwstwin::twin::{TwinConfig, TwinHandle};

pub fn fast_config() -> Config {
    let mut cfg = Config::default();
    cfg.emulator.service_time_ms = ServiceTimes::zero();
    cfg
}

pub async fn emulator(cfg: &Config) -> EmulatorHandle {
    EmulatorServer::from_config(cfg)
        .unwrap()
        .spawn("127.0.0.1:0".parse().unwrap())
        .await
        .unwrap()
}

pub async fn twin_for(emu: &EmulatorHandle, cfg: &Config) -> TwinHandle {
    let twin = TwinHandle::start(TwinConfig {
        controller_url: emu.base_url(),
        credentials: cfg.credentials.clone(),
        robot: cfg.robot.clone(),
        floor_ms: 2,
        ..TwinConfig::default()
    })
    .unwrap();
    assert!(twin.wait_connected(Duration::from_secs(5)).await, "twin never connected");
    twin
}
