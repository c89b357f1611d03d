//! Digital-twin client: polling loops, state store, events and telemetry.

mod client;
pub mod events;
pub mod state;
pub mod telemetry;
pub mod trajectory;

use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub use client::{ClientError, RwsClient};
pub use events::{derive_events, AbstractEvent, EventKind};
pub use state::{Connection, ConnectionState, Sample, TwinStore};
pub use telemetry::{RefreshCounter, RefreshStats, StreamKind, WindowStats};
pub use trajectory::{TrajectoryRecorder, TrajectoryRow, CSV_HEADER};

use crate::kinematics::{DhTable, JointConfig};
use crate::wire::paths::{self, spylog_uri};
use crate::wire::{DigestCredentials, IoSnapshotMsg, JointTargetMsg, RobTargetMsg, SpyLogMsg};

pub fn unix_now_ms() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64() * 1000.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwinConfig {
    pub controller_url: String,
    pub credentials: DigestCredentials,
    pub robot: DhTable,
    /// Minimum spacing between GETs on a data stream; 0 polls back to back.
    pub floor_ms: u64,
    pub spylog: bool,
    pub spylog_interval_ms: u64,
    pub backoff_initial_ms: u64,
    pub backoff_cap_ms: u64,
    pub seed: u64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            controller_url: "http://127.0.0.1:8080".into(),
            credentials: DigestCredentials::default(),
            robot: DhTable::default(),
            floor_ms: 0,
            spylog: true,
            spylog_interval_ms: 100,
            backoff_initial_ms: 100,
            backoff_cap_ms: 2000,
            seed: 1,
        }
    }
}

/// Running twin. Clone-free: share it behind an `Arc`.
pub struct TwinHandle {
    config: TwinConfig,
    store: Arc<TwinStore>,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl TwinHandle {
    /// Starts one loop per stream. The controller does not need to be up.
    pub fn start(config: TwinConfig) -> Result<Self, ClientError> {
        let store = Arc::new(TwinStore::new(config.robot.clone()));
        let (stop, stop_rx) = watch::channel(false);
        let mut tasks = Vec::new();
        let mut kinds = StreamKind::DATA.to_vec();
        if config.spylog {
            kinds.push(StreamKind::Spylog);
        }
        for (i, kind) in kinds.into_iter().enumerate() {
            let client = RwsClient::new(
                &config.controller_url,
                config.credentials.clone(),
                config.seed.wrapping_mul(31).wrapping_add(i as u64),
            )?;
            tasks.push(tokio::spawn(poll_loop(
                kind,
                client,
                Arc::clone(&store),
                config.clone(),
                stop_rx.clone(),
            )));
        }
        Ok(Self {
            config,
            store,
            stop,
            tasks,
        })
    }

    pub fn config(&self) -> &TwinConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<TwinStore> {
        &self.store
    }

    pub fn dh(&self) -> &DhTable {
        self.store.dh()
    }

    /// Current joints if the last sample is at most `max_age_ms` old.
    pub fn fresh_joints(&self, max_age_ms: f64) -> Option<Arc<Sample<JointConfig>>> {
        self.store
            .joints()
            .filter(|s| s.age_ms(unix_now_ms()) <= max_age_ms)
    }

    /// Waits until the joints stream satisfies `pred`.
    pub async fn wait_joints(
        &self,
        timeout: Duration,
        mut pred: impl FnMut(&Sample<JointConfig>) -> bool,
    ) -> Option<Arc<Sample<JointConfig>>> {
        let mut rx = self.store.subscribe_joints();
        let fut = async move {
            rx.wait_for(|s| s.as_deref().is_some_and(&mut pred))
                .await
                .ok()
                .and_then(|s| s.clone())
        };
        tokio::time::timeout(timeout, fut).await.ok().flatten()
    }

    /// Waits for the first sample on every data stream.
    pub async fn wait_connected(&self, timeout: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + timeout;
        while tokio::time::Instant::now() < deadline {
            if self.store.connection().state == ConnectionState::Up {
                return true;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        false
    }

    /// Signals every loop to exit without waiting for them.
    pub fn stop(&self) {
        let _ = self.stop.send(true);
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

async fn poll_once(kind: StreamKind, client: &RwsClient, store: &TwinStore) -> Result<(), ClientError> {
    match kind {
        StreamKind::Joints => {
            let m: JointTargetMsg = client.get(paths::JOINTTARGET).await?;
            store.accept_joints(&m);
        }
        StreamKind::Robtarget => {
            let m: RobTargetMsg = client.get(paths::ROBTARGET).await?;
            store.accept_tcp(&m)?;
        }
        StreamKind::Io => {
            let m: IoSnapshotMsg = client.get(paths::IO_SIGNALS).await?;
            store.accept_io(m);
        }
        StreamKind::Spylog => {
            let m: SpyLogMsg = client.get(&spylog_uri(store.last_spylog_seq())).await?;
            store.accept_spylog(&m.events);
        }
    }
    Ok(())
}

async fn poll_loop(
    kind: StreamKind,
    client: RwsClient,
    store: Arc<TwinStore>,
    cfg: TwinConfig,
    mut stop: watch::Receiver<bool>,
) {
    let initial = Duration::from_millis(cfg.backoff_initial_ms.max(1));
    let cap = Duration::from_millis(cfg.backoff_cap_ms.max(cfg.backoff_initial_ms));
    let pace = Duration::from_millis(match kind {
        StreamKind::Spylog => cfg.spylog_interval_ms,
        _ => cfg.floor_ms,
    });
    let mut backoff = initial;
    loop {
        let started = tokio::time::Instant::now();
        let result = tokio::select! {
            r = poll_once(kind, &client, &store) => r,
            _ = stop.wait_for(|s| *s) => return,
        };
        let wait = match result {
            Ok(()) => {
                store.record_success(kind, unix_now_ms());
                backoff = initial;
                pace.saturating_sub(started.elapsed())
            }
            Err(e) => {
                let fatal = matches!(e, ClientError::Auth(_));
                tracing::warn!(stream = %kind, "poll failed: {e}");
                store.record_failure(kind, e.to_string(), fatal);
                let w = backoff;
                backoff = (backoff * 2).min(cap);
                w
            }
        };
        if !wait.is_zero() {
            tokio::select! {
                _ = tokio::time::sleep(wait) => {}
                _ = stop.wait_for(|s| *s) => return,
            }
        }
    }
}
