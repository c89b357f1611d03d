//! HTTP service exposing the simulation over the controller dialect.
//!
//! One task owns the [`Simulation`]: it ticks on the wall clock and drains
//! the command queue fed by the control handlers. Read handlers only touch
//! the latest published [`SimSnapshot`], so a slow request never stalls the
//! tick loop.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

use super::settings::{EmulatorSettings, WorkcellSettings};
use super::sim::{ControlError, EmulatorError, SimSnapshot, Simulation, SpyLog, TrajectorySample};
use crate::config::Config;
use crate::kinematics::{DhTable, JOINTS};
use crate::wire::paths::{self, ExecutionAction};
use crate::wire::{
    AckMsg, DigestCredentials, DigestVerifier, ErrorMsg, IoSetMsg, IoSnapshotMsg, JogTargetMsg,
    JointTargetMsg, ProtocolError, RobTargetMsg, SpyLogMsg, WireMessage,
};

/// Control requests serialized onto the simulation task.
#[derive(Debug, Clone, PartialEq)]
pub enum SimCommand {
    Execution(ExecutionAction),
    JointTarget([f64; JOINTS]),
    IoSet { name: String, value: u8 },
}

type Envelope = (SimCommand, oneshot::Sender<Result<(), ControlError>>);

/// Data resources with their own sequence counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resource {
    JointTarget,
    RobTarget,
    Io,
}

struct Shared {
    dh: DhTable,
    settings: EmulatorSettings,
    camera_delay_ms: AtomicU64,
    verifier: DigestVerifier,
    snapshot: watch::Receiver<Arc<SimSnapshot>>,
    commands: mpsc::Sender<Envelope>,
    seq: [AtomicU64; 3],
    jitter: Mutex<ChaCha8Rng>,
    spylog: Arc<RwLock<SpyLog>>,
    trajectory: Arc<Mutex<std::collections::VecDeque<TrajectorySample>>>,
}

impl Shared {
    fn next_seq(&self, r: Resource) -> u64 {
        self.seq[r as usize].fetch_add(1, Ordering::Relaxed) + 1
    }

    /// Holds the response for the resource's service time, plus the camera
    /// penalty when recognition is running as the request arrives.
    async fn service_delay(&self, base_ms: f64) {
        let mut ms = base_ms;
        if self.settings.jitter_ms > 0.0 {
            ms += self.jitter.lock().random_range(0.0..self.settings.jitter_ms);
        }
        if self.snapshot.borrow().camera_busy {
            ms += self.camera_delay_ms.load(Ordering::Relaxed) as f64;
        }
        if ms > 0.0 {
            tokio::time::sleep(Duration::from_secs_f64(ms / 1000.0)).await;
        }
    }

    async fn submit(&self, cmd: SimCommand) -> Result<(), ControlError> {
        let (tx, rx) = oneshot::channel();
        let closed = || ControlError::Busy("simulation stopped".into());
        self.commands.send((cmd, tx)).await.map_err(|_| closed())?;
        rx.await.map_err(|_| closed())?
    }
}

pub struct EmulatorServer {
    sim: Simulation,
    settings: EmulatorSettings,
    creds: DigestCredentials,
}

impl EmulatorServer {
    pub fn new(
        dh: DhTable,
        settings: EmulatorSettings,
        cell: &WorkcellSettings,
        creds: DigestCredentials,
    ) -> Result<Self, EmulatorError> {
        let epoch = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        let sim = Simulation::new(dh, &settings, cell, epoch)?;
        Ok(Self {
            sim,
            settings,
            creds,
        })
    }

    pub fn from_config(cfg: &Config) -> Result<Self, EmulatorError> {
        Self::new(
            cfg.robot.clone(),
            cfg.emulator.clone(),
            &cfg.workcell,
            cfg.credentials.clone(),
        )
    }

    /// Binds, starts the simulation clock and serves until shut down.
    pub async fn spawn(self, addr: SocketAddr) -> Result<EmulatorHandle, EmulatorError> {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let Self {
            sim,
            settings,
            creds,
        } = self;

        let (snap_tx, snap_rx) = watch::channel(Arc::new(sim.snapshot()));
        let (cmd_tx, cmd_rx) = mpsc::channel::<Envelope>(64);
        let (stop_tx, stop_rx) = watch::channel(false);

        let shared = Arc::new(Shared {
            dh: sim.dh().clone(),
            camera_delay_ms: AtomicU64::new(settings.camera_delay_ms),
            verifier: DigestVerifier::new(creds.clone(), settings.seed),
            snapshot: snap_rx,
            commands: cmd_tx,
            seq: Default::default(),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(settings.seed ^ 0x5eed)),
            spylog: sim.spylog(),
            trajectory: sim.trajectory(),
            settings,
        });

        let tick_task = tokio::spawn(run_simulation(sim, snap_tx, cmd_rx, stop_rx.clone()));
        let app = router(Arc::clone(&shared));
        let mut stop = stop_rx;
        let server_task = tokio::spawn(async move {
            let shutdown = async move {
                let _ = stop.wait_for(|s| *s).await;
            };
            if let Err(e) = axum::serve(listener, app)
                .with_graceful_shutdown(shutdown)
                .await
            {
                tracing::error!("emulator server: {e}");
            }
        });
        tracing::info!(%addr, "controller emulator listening");
        Ok(EmulatorHandle {
            addr,
            shared,
            creds,
            stop: stop_tx,
            tasks: vec![tick_task, server_task],
        })
    }
}

async fn run_simulation(
    mut sim: Simulation,
    snapshots: watch::Sender<Arc<SimSnapshot>>,
    mut commands: mpsc::Receiver<Envelope>,
    mut stop: watch::Receiver<bool>,
) {
    let tick_s = sim.tick_s();
    let start = Instant::now();
    let start_tick = sim.tick_count();
    let mut interval = tokio::time::interval(Duration::from_secs_f64(tick_s));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut logged = 0;
    loop {
        tokio::select! {
            _ = interval.tick() => {
                let due = start_tick + (start.elapsed().as_secs_f64() / tick_s) as u64;
                while sim.tick_count() < due {
                    sim.tick();
                }
            }
            Some((cmd, reply)) = commands.recv() => {
                let result = match cmd {
                    SimCommand::Execution(a) => sim.handle_execution_action(a),
                    SimCommand::JointTarget(j) => sim.handle_symbol_update(j),
                    SimCommand::IoSet { name, value } => sim.handle_io_set(&name, value),
                };
                let _ = reply.send(result);
            }
            _ = stop.wait_for(|s| *s) => break,
        }
        let fresh = sim.spylog_read(logged);
        for e in &fresh.events {
            tracing::info!(target: "rwstwin::emulator", "{}", e.text);
        }
        logged = fresh.next_since;
        snapshots.send_replace(Arc::new(sim.snapshot()));
    }
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route(paths::JOINTTARGET, get(get_jointtarget))
        .route(paths::ROBTARGET, get(get_robtarget))
        .route(paths::IO_SIGNALS, get(get_io))
        .route(&format!("{}/{{name}}", paths::IO_SIGNALS), post(post_io_set))
        .route(paths::SPYLOG, get(get_spylog))
        .route(paths::EXECUTION, get(get_execution).post(post_execution))
        .route(paths::SYMBOL_JTARGET, post(post_symbol))
        .layer(middleware::from_fn_with_state(Arc::clone(&shared), digest_auth))
        .with_state(shared)
}

async fn digest_auth(State(shared): State<Arc<Shared>>, req: Request, next: Next) -> Response {
    let uri = req
        .uri()
        .path_and_query()
        .map_or_else(|| req.uri().path().to_string(), |pq| pq.as_str().to_string());
    let header = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|h| h.to_str().ok());
    match shared.verifier.verify(req.method().as_str(), &uri, header) {
        Ok(()) => next.run(req).await,
        Err(failure) => {
            let challenge = shared.verifier.challenge(failure.is_stale()).to_header();
            let mut resp = (
                StatusCode::UNAUTHORIZED,
                Json(ErrorMsg::new("unauthorized", failure.to_string())),
            )
                .into_response();
            if let Ok(v) = HeaderValue::from_str(&challenge) {
                resp.headers_mut().insert(header::WWW_AUTHENTICATE, v);
            }
            resp
        }
    }
}

fn wire_json<M: WireMessage>(msg: &M) -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        msg.encode(),
    )
        .into_response()
}

fn control_error(e: ControlError) -> Response {
    let (status, code) = match &e {
        ControlError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
        ControlError::Busy(_) => (StatusCode::CONFLICT, "busy"),
        ControlError::JointLimit { .. } => (StatusCode::BAD_REQUEST, "joint_limit"),
        ControlError::InvalidValue(_) => (StatusCode::BAD_REQUEST, "invalid_value"),
        ControlError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        ControlError::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
    };
    let mut body = ErrorMsg::new(code, e.to_string());
    if let ControlError::JointLimit { joint, .. } = e {
        body.joint = Some(joint);
    }
    (status, Json(body)).into_response()
}

fn protocol_error(e: ProtocolError) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(ErrorMsg::new("protocol", e.to_string())),
    )
        .into_response()
}

fn ack(result: Result<(), ControlError>) -> Response {
    match result {
        Ok(()) => Json(AckMsg::ok()).into_response(),
        Err(e) => control_error(e),
    }
}

async fn get_jointtarget(State(s): State<Arc<Shared>>) -> Response {
    s.service_delay(s.settings.service_time_ms.jointtarget).await;
    let snap = Arc::clone(&s.snapshot.borrow());
    let seq = s.next_seq(Resource::JointTarget);
    wire_json(&JointTargetMsg::from_config(&snap.q, seq, snap.timestamp_ms))
}

async fn get_robtarget(State(s): State<Arc<Shared>>) -> Response {
    s.service_delay(s.settings.service_time_ms.robtarget).await;
    let snap = Arc::clone(&s.snapshot.borrow());
    let seq = s.next_seq(Resource::RobTarget);
    wire_json(&RobTargetMsg::from_pose(&snap.pose, seq, snap.timestamp_ms))
}

async fn get_io(State(s): State<Arc<Shared>>) -> Response {
    s.service_delay(s.settings.service_time_ms.io).await;
    let snap = Arc::clone(&s.snapshot.borrow());
    let seq = s.next_seq(Resource::Io);
    wire_json(&IoSnapshotMsg {
        signals: snap.io.clone(),
        seq,
        timestamp_ms: snap.timestamp_ms,
    })
}

async fn get_spylog(
    State(s): State<Arc<Shared>>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let since = match q.get("since").map(|v| v.parse::<u64>()) {
        None => 0,
        Some(Ok(v)) => v,
        Some(Err(_)) => {
            return protocol_error(ProtocolError::InvalidField {
                field: "since".into(),
                reason: "expected an unsigned integer".into(),
            })
        }
    };
    s.service_delay(s.settings.service_time_ms.spylog).await;
    let msg: SpyLogMsg = s.spylog.read().read(since);
    wire_json(&msg)
}

async fn get_execution(State(s): State<Arc<Shared>>) -> Response {
    s.service_delay(s.settings.service_time_ms.control).await;
    let rapid = s.snapshot.borrow().rapid;
    Json(rapid).into_response()
}

async fn post_execution(
    State(s): State<Arc<Shared>>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let action = match q.get("action").map(|a| a.parse::<ExecutionAction>()) {
        Some(Ok(a)) => a,
        Some(Err(e)) => return protocol_error(ProtocolError::invalid("action", e)),
        None => return protocol_error(ProtocolError::MissingField("action".into())),
    };
    s.service_delay(s.settings.service_time_ms.control).await;
    ack(s.submit(SimCommand::Execution(action)).await)
}

async fn post_symbol(
    State(s): State<Arc<Shared>>,
    Query(q): Query<HashMap<String, String>>,
    body: Bytes,
) -> Response {
    if q.get("action").map(String::as_str) != Some("set") {
        return protocol_error(ProtocolError::invalid("action", "expected action=set"));
    }
    let msg = match JogTargetMsg::decode(&body) {
        Ok(m) => m,
        Err(e) => return protocol_error(e),
    };
    s.service_delay(s.settings.service_time_ms.control).await;
    ack(s.submit(SimCommand::JointTarget(msg.joints)).await)
}

async fn post_io_set(
    State(s): State<Arc<Shared>>,
    Path(name): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    body: Bytes,
) -> Response {
    if q.get("action").map(String::as_str) != Some("set") {
        return protocol_error(ProtocolError::invalid("action", "expected action=set"));
    }
    let msg = match IoSetMsg::decode(&body) {
        Ok(m) => m,
        Err(e) => return protocol_error(e),
    };
    s.service_delay(s.settings.service_time_ms.control).await;
    ack(s
        .submit(SimCommand::IoSet {
            name,
            value: msg.value,
        })
        .await)
}

/// Running emulator. Dropping the handle leaves the service running until
/// the runtime shuts down; call [`EmulatorHandle::shutdown`] to stop it.
pub struct EmulatorHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    creds: DigestCredentials,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl EmulatorHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn credentials(&self) -> &DigestCredentials {
        &self.creds
    }

    pub fn dh(&self) -> &DhTable {
        &self.shared.dh
    }

    pub fn snapshot(&self) -> Arc<SimSnapshot> {
        Arc::clone(&self.shared.snapshot.borrow())
    }

    pub fn subscribe(&self) -> watch::Receiver<Arc<SimSnapshot>> {
        self.shared.snapshot.clone()
    }

    /// Copy of the per-tick joint/pose log.
    pub fn trajectory(&self) -> Vec<TrajectorySample> {
        self.shared.trajectory.lock().iter().copied().collect()
    }

    pub fn spylog_read(&self, since: u64) -> SpyLogMsg {
        self.shared.spylog.read().read(since)
    }

    /// Number of responses served so far on a data resource.
    pub fn served(&self, r: Resource) -> u64 {
        self.shared.seq[r as usize].load(Ordering::Relaxed)
    }

    pub fn set_camera_delay_ms(&self, ms: u64) {
        self.shared.camera_delay_ms.store(ms, Ordering::Relaxed);
    }

    /// Applies a control command directly, bypassing HTTP.
    pub async fn command(&self, cmd: SimCommand) -> Result<(), ControlError> {
        self.shared.submit(cmd).await
    }

    /// Waits until a published snapshot satisfies `pred`, or the timeout.
    pub async fn wait_for(
        &self,
        timeout: Duration,
        mut pred: impl FnMut(&SimSnapshot) -> bool,
    ) -> Option<Arc<SimSnapshot>> {
        let mut rx = self.shared.snapshot.clone();
        let fut = async move {
            rx.wait_for(|s| pred(s)).await.ok().map(|s| Arc::clone(&s))
        };
        tokio::time::timeout(timeout, fut).await.ok().flatten()
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }
}
