//! Browser-facing gateway: aggregated state, live push, command forwarding.
//!
//! | route | |
//! |---|---|
//! | `GET /api/state` | aggregated view, 503 while the twin is down |
//! | `GET /api/stream` | server-sent events, latest view at a fixed cadence |
//! | `POST /api/command` | `kind` = `pointer` \| `jog` \| `linear` \| `do` |
//! | `GET /api/ticket/{id}` | ticket status |
//! | `GET /api/metrics` | refresh windows per stream |
//! | `GET /api/camera.jpg` | rendered phase frame |

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio_stream::wrappers::WatchStream;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

use crate::emulator::camera::{encode_jpeg, render_frame};
use crate::emulator::{CyclePhase, Shape};
use crate::gateway::{GatewayError, JogCommand, JogMode, LinearCommand, MotionGateway};
use crate::twin::{
    unix_now_ms, AbstractEvent, Connection, ConnectionState, StreamKind, TwinStore, WindowStats,
};
use crate::wire::paths::ExecutionAction;
use crate::wire::{IoSnapshotMsg, SpyEvent};

pub const EVENTS_IN_VIEW: usize = 100;
pub const SPYLOG_IN_VIEW: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointsView {
    pub deg: [f64; 6],
    pub seq: u64,
    pub timestamp_ms: u64,
    pub age_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcpView {
    pub pos: [f64; 3],
    pub quat: [f64; 4],
    pub seq: u64,
    pub timestamp_ms: u64,
    pub age_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStateView {
    pub generated_ms: f64,
    pub connection: Connection,
    pub cycle_phase: Option<CyclePhase>,
    pub joints: Option<JointsView>,
    pub tcp: Option<TcpView>,
    pub io: Option<IoSnapshotMsg>,
    pub events: Vec<AbstractEvent>,
    pub spylog: Vec<SpyEvent>,
    pub refresh: Vec<WindowStats>,
}

pub fn aggregate_view(store: &TwinStore) -> AggregateStateView {
    let now = unix_now_ms();
    let stats = store.refresh_stats();
    AggregateStateView {
        generated_ms: now,
        connection: store.connection(),
        cycle_phase: store.phase(),
        joints: store.joints().map(|s| JointsView {
            deg: s.value.to_degrees(),
            seq: s.seq,
            timestamp_ms: s.timestamp_ms,
            age_ms: s.age_ms(now),
        }),
        tcp: store.tcp().map(|s| TcpView {
            pos: [s.value.position.x, s.value.position.y, s.value.position.z],
            quat: s.value.quat_wxyz(),
            seq: s.seq,
            timestamp_ms: s.timestamp_ms,
            age_ms: s.age_ms(now),
        }),
        io: store.io().map(|io| (*io).clone()),
        events: store.events_tail(EVENTS_IN_VIEW),
        spylog: store.spylog_tail(SPYLOG_IN_VIEW),
        refresh: stats.streams.iter().filter_map(|s| s.latest).collect(),
    }
}

/// Body of `POST /api/command`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CommandRequest {
    Pointer {
        action: ExecutionAction,
    },
    Jog {
        #[serde(default = "absolute")]
        mode: JogMode,
        joints: [f64; 6],
    },
    Linear {
        dx: f64,
        dy: f64,
        dz: f64,
        #[serde(default = "yes")]
        keep_orientation: bool,
    },
    Do {
        name: String,
        value: u8,
    },
}

fn absolute() -> JogMode {
    JogMode::Absolute
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub cadence: Duration,
    pub heartbeat: Duration,
    pub static_dir: Option<PathBuf>,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            cadence: Duration::from_millis(50),
            heartbeat: Duration::from_secs(2),
            static_dir: None,
        }
    }
}

struct AppState {
    gateway: Arc<MotionGateway>,
    feed: watch::Receiver<Arc<String>>,
    heartbeat: Duration,
}

pub struct ProxyHandle {
    addr: SocketAddr,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl ProxyHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

pub async fn serve(
    gateway: Arc<MotionGateway>,
    addr: SocketAddr,
    cfg: ProxyConfig,
) -> std::io::Result<ProxyHandle> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (stop, stop_rx) = watch::channel(false);

    let store = Arc::clone(gateway.twin().store());
    let initial = serde_json::to_string(&aggregate_view(&store)).expect("view serialises");
    let (feed_tx, feed_rx) = watch::channel(Arc::new(initial));
    let mut feed_stop = stop_rx.clone();
    let cadence = cfg.cadence;
    let feeder = tokio::spawn(async move {
        let mut tick = tokio::time::interval(cadence);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                _ = tick.tick() => {
                    let view = serde_json::to_string(&aggregate_view(&store)).expect("view serialises");
                    feed_tx.send_replace(Arc::new(view));
                }
                _ = feed_stop.wait_for(|s| *s) => break,
            }
        }
    });

    let state = Arc::new(AppState {
        gateway,
        feed: feed_rx,
        heartbeat: cfg.heartbeat,
    });
    let api = Router::new()
        .route("/api/state", get(get_state))
        .route("/api/stream", get(stream_state))
        .route("/api/command", post(post_command))
        .route("/api/ticket/{id}", get(get_ticket))
        .route("/api/metrics", get(get_metrics))
        .route("/api/camera.jpg", get(get_camera))
        .with_state(state);
    let app = match cfg.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    }
    .layer(
        CorsLayer::new()
            .allow_origin(Any)
            .allow_methods(Any)
            .allow_headers(Any),
    );

    let mut server_stop = stop_rx;
    let server = tokio::spawn(async move {
        let shutdown = async move {
            let _ = server_stop.wait_for(|s| *s).await;
        };
        if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
            tracing::error!("proxy server: {e}");
        }
    });
    tracing::info!(%addr, "proxy listening");
    Ok(ProxyHandle {
        addr,
        stop,
        tasks: vec![feeder, server],
    })
}

fn error_body(status: u16, message: String, field: Option<&str>, joint: Option<usize>) -> Response {
    let mut body = json!({ "error": message });
    if let Some(f) = field {
        body["field"] = json!(f);
    }
    if let Some(j) = joint {
        body["joint"] = json!(j);
    }
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_GATEWAY);
    (status, Json(body)).into_response()
}

fn gateway_error(e: GatewayError) -> Response {
    let status = e.http_status();
    let (field, joint) = match &e {
        GatewayError::JointLimit { joint, .. } => (Some("joints"), Some(*joint)),
        GatewayError::Invalid { field, .. } => (Some(field.as_str()), None),
        GatewayError::Controller { body, .. } => (None, body.joint),
        _ => (None, None),
    };
    let mut resp = error_body(status, e.to_string(), field, joint);
    if matches!(e, GatewayError::Stale { .. }) {
        resp.headers_mut()
            .insert(header::RETRY_AFTER, header::HeaderValue::from_static("1"));
    }
    resp
}

async fn get_state(State(s): State<Arc<AppState>>) -> Response {
    let view = aggregate_view(s.gateway.twin().store());
    if view.connection.state == ConnectionState::Down {
        let reason = view
            .connection
            .reason
            .clone()
            .unwrap_or_else(|| "twin is down".into());
        return error_body(503, reason, None, None);
    }
    Json(view).into_response()
}

async fn stream_state(
    State(s): State<Arc<AppState>>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let stream = WatchStream::new(s.feed.clone())
        .map(|json| Ok(Event::default().event("state").data(json.as_str())));
    Sse::new(stream).keep_alive(KeepAlive::new().interval(s.heartbeat).text("heartbeat"))
}

/// Pulls the backticked field name out of a serde error message.
fn serde_field(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let end = start + msg[start..].find('`')?;
    Some(msg[start..end].to_string())
}

async fn post_command(State(s): State<Arc<AppState>>, body: Bytes) -> Response {
    let cmd: CommandRequest = match serde_json::from_slice(&body) {
        Ok(c) => c,
        Err(e) => {
            let msg = e.to_string();
            let field = serde_field(&msg).unwrap_or_else(|| "body".into());
            return error_body(400, msg, Some(&field), None);
        }
    };
    let gw = &s.gateway;
    let result = match cmd {
        CommandRequest::Pointer { action } => gw.pointer_op(action).await,
        CommandRequest::Jog { mode, joints } => gw.jog(JogCommand { mode, joints }).await,
        CommandRequest::Linear {
            dx,
            dy,
            dz,
            keep_orientation,
        } => {
            gw.linear_move(LinearCommand {
                dx,
                dy,
                dz,
                keep_orientation,
            })
            .await
        }
        CommandRequest::Do { name, value } => gw.set_do(&name, value).await,
    };
    match result {
        Ok(ticket) => (StatusCode::ACCEPTED, Json(ticket)).into_response(),
        Err(e) => gateway_error(e),
    }
}

async fn get_ticket(State(s): State<Arc<AppState>>, Path(id): Path<u64>) -> Response {
    match s.gateway.ticket(id) {
        Some(t) => Json(t).into_response(),
        None => error_body(404, format!("no ticket {id}"), None, None),
    }
}

async fn get_metrics(State(s): State<Arc<AppState>>) -> Response {
    Json(s.gateway.twin().store().refresh_stats()).into_response()
}

async fn get_camera(State(s): State<Arc<AppState>>) -> Response {
    let store = s.gateway.twin().store();
    let phase = store.phase().unwrap_or(CyclePhase::Idle);
    let shape = store
        .io()
        .and_then(|io| Shape::ALL.into_iter().find(|sh| io.is_high(sh.signal())));
    let jpg = tokio::task::spawn_blocking(move || encode_jpeg(&render_frame(phase, shape, 320, 240), 80))
        .await
        .unwrap_or_default();
    ([(header::CONTENT_TYPE, "image/jpeg")], jpg).into_response()
}

async fn placeholder() -> Html<&'static str> {
    Html(
        "<!doctype html><title>rwstwin proxy</title>\
         <p>Operator console not installed. API under <code>/api/</code>.</p>",
    )
}

/// Convenience: metrics series of one stream.
pub fn stream_windows(store: &TwinStore, kind: StreamKind) -> Vec<WindowStats> {
    store
        .refresh_stats()
        .stream(kind)
        .map(|s| s.windows.clone())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_bodies() {
        let c: CommandRequest =
            serde_json::from_str(r#"{"kind":"jog","mode":"relative","joints":[10,0,0,0,0,0]}"#).unwrap();
        assert_eq!(
            c,
            CommandRequest::Jog {
                mode: JogMode::Relative,
                joints: [10.0, 0.0, 0.0, 0.0, 0.0, 0.0]
            }
        );
        let c: CommandRequest = serde_json::from_str(r#"{"kind":"pointer","action":"start"}"#).unwrap();
        assert_eq!(c, CommandRequest::Pointer { action: ExecutionAction::Start });
        let e = serde_json::from_str::<CommandRequest>(r#"{"kind":"jog"}"#).unwrap_err();
        assert_eq!(serde_field(&e.to_string()).as_deref(), Some("joints"));
    }
}
