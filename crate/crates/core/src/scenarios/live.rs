use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use nalgebra::Vector3;
use serde::Serialize;

use super::{CriterionReport, ScenarioError, ScenarioResult, TITLES};
use crate::config::Config;
use crate::emulator::{CyclePhase, EmulatorHandle, EmulatorServer};
use crate::gateway::{
    handle_line, JogCommand, JogMode, LinearCommand, MotionGateway, SolverClient, SolverReply,
    SolverRequest, SolverService, TicketStatus,
};
use crate::kinematics::{forward_kinematics, link_frames, JointConfig, Pose, JOINTS};
use crate::twin::state::parse_phase;
use crate::twin::{StreamKind, TwinConfig, TwinHandle, WindowStats};
use crate::wire::paths::ExecutionAction;

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

struct LiveCell {
    emu: EmulatorHandle,
    gateway: Arc<MotionGateway>,
}

impl LiveCell {
    async fn start(cfg: &Config) -> ScenarioResult<Self> {
        let emu = EmulatorServer::from_config(cfg)?.spawn(loopback()).await?;
        let twin = TwinHandle::start(TwinConfig {
            controller_url: emu.base_url(),
            credentials: cfg.credentials.clone(),
            robot: cfg.robot.clone(),
            floor_ms: 0,
            ..TwinConfig::default()
        })?;
        if !twin.wait_connected(Duration::from_secs(5)).await {
            let reason = twin.store().connection().reason.unwrap_or_default();
            twin.shutdown().await;
            emu.shutdown().await;
            return Err(ScenarioError(format!("twin never connected: {reason}")));
        }
        let gateway = Arc::new(MotionGateway::new(Arc::new(twin), cfg.solver.clone())?);
        Ok(Self { emu, gateway })
    }

    fn twin(&self) -> &Arc<TwinHandle> {
        self.gateway.twin()
    }

    async fn shutdown(self) {
        self.twin().stop();
        self.emu.shutdown().await;
    }

    async fn run_cycles(&self, cycles: u64, per_cycle: Duration) -> ScenarioResult<()> {
        self.gateway.pointer_op(ExecutionAction::Resetpp).await?;
        self.gateway.pointer_op(ExecutionAction::Start).await?;
        let timeout = per_cycle * cycles as u32;
        let reached = self
            .emu
            .wait_for(timeout, |s| s.rapid.cycle_count >= cycles)
            .await;
        self.gateway.pointer_op(ExecutionAction::Stop).await?;
        match reached {
            Some(_) => Ok(()),
            None => Err(ScenarioError(format!("{cycles} cycle(s) did not finish in {timeout:?}"))),
        }
    }

    fn windows(&self) -> Vec<WindowStats> {
        self.twin()
            .store()
            .refresh_stats()
            .streams
            .into_iter()
            .flat_map(|s| s.windows)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// refresh period

#[derive(Debug, Clone, Serialize)]
pub struct StreamPeriodSummary {
    pub stream: StreamKind,
    pub windows: usize,
    pub warmup_windows: usize,
    pub mean_period_ms: Option<f64>,
    pub min_period_ms: Option<f64>,
    pub max_period_ms: Option<f64>,
    pub identity_violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefreshBenchReport {
    pub duration_s: f64,
    pub streams: Vec<StreamPeriodSummary>,
    pub windows: Vec<WindowStats>,
}

impl RefreshBenchReport {
    pub fn stream(&self, kind: StreamKind) -> Option<&StreamPeriodSummary> {
        self.streams.iter().find(|s| s.stream == kind)
    }

    /// Plain-text table, one row per stream.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>8} {:>8} {:>10} {:>10} {:>10}\n",
            "stream", "windows", "warmup", "mean_ms", "min_ms", "max_ms"
        );
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        for s in &self.streams {
            out.push_str(&format!(
                "{:<10} {:>8} {:>8} {:>10} {:>10} {:>10}\n",
                s.stream.as_str(),
                s.windows,
                s.warmup_windows,
                f(s.mean_period_ms),
                f(s.min_period_ms),
                f(s.max_period_ms)
            ));
        }
        out
    }
}

fn identity_holds(w: &WindowStats) -> bool {
    (w.period_ms * f64::from(w.window_count) - 1000.0).abs() <= 1.0
}

fn summarize(kind: StreamKind, windows: &[WindowStats]) -> StreamPeriodSummary {
    let all: Vec<&WindowStats> = windows.iter().filter(|w| w.stream == kind).collect();
    let steady: Vec<f64> = all.iter().filter(|w| !w.warmup).map(|w| w.period_ms).collect();
    StreamPeriodSummary {
        stream: kind,
        windows: steady.len(),
        warmup_windows: all.len() - steady.len(),
        mean_period_ms: (!steady.is_empty()).then(|| steady.iter().sum::<f64>() / steady.len() as f64),
        min_period_ms: steady.iter().copied().reduce(f64::min),
        max_period_ms: steady.iter().copied().reduce(f64::max),
        identity_violations: all.iter().filter(|w| !identity_holds(w)).count(),
    }
}

/// Polls a default-timed emulator for `duration` and summarises the windows.
pub async fn refresh_benchmark(cfg: &Config, duration: Duration) -> ScenarioResult<RefreshBenchReport> {
    let cell = LiveCell::start(cfg).await?;
    tokio::time::sleep(duration).await;
    let windows = cell.windows();
    cell.shutdown().await;
    Ok(RefreshBenchReport {
        duration_s: duration.as_secs_f64(),
        streams: StreamKind::ALL.iter().map(|k| summarize(*k, &windows)).collect(),
        windows,
    })
}

pub fn judge_refresh(r: &RefreshBenchReport) -> CriterionReport {
    let limits = [
        (StreamKind::Joints, 20.0),
        (StreamKind::Robtarget, 20.0),
        (StreamKind::Io, 30.0),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (kind, limit) in limits {
        match r.stream(kind).and_then(|s| s.mean_period_ms.map(|m| (m, s))) {
            Some((mean, s)) => {
                passed &= mean <= limit && s.identity_violations == 0;
                parts.push(format!("{kind} {mean:.2} ms (<= {limit})"));
            }
            None => {
                passed = false;
                parts.push(format!("{kind} no steady windows"));
            }
        }
    }
    let violations: usize = r.streams.iter().map(|s| s.identity_violations).sum();
    passed &= violations == 0;
    parts.push(format!("identity violations {violations}"));
    CriterionReport::new(1, TITLES[0], passed, parts.join(", "), &r.streams)
}

// ---------------------------------------------------------------------------
// camera-load latency

#[derive(Debug, Clone, Serialize)]
pub struct CameraStreamSummary {
    pub stream: StreamKind,
    pub idle_mean_ms: Option<f64>,
    pub recognize_max_ms: Option<f64>,
    /// `max_period_ms` of the first window after each recognition phase.
    pub after_max_ms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CameraLatencyReport {
    pub camera_delay_ms: u64,
    pub cycles: u64,
    /// Recognition phases as `[start_ms, end_ms)` on the unix clock.
    pub recognize: Vec<(f64, f64)>,
    pub streams: Vec<CameraStreamSummary>,
    pub windows: Vec<WindowStats>,
}

fn recognize_intervals(events: &[crate::wire::SpyEvent]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut open: Option<f64> = None;
    for e in events {
        let Some(phase) = parse_phase(&e.text) else { continue };
        let t = e.timestamp_ms as f64;
        if let Some(start) = open.take() {
            out.push((start, t));
        }
        if phase == CyclePhase::Recognize {
            open = Some(t);
        }
    }
    out
}

/// Runs `cycles` stacking cycles with the camera stalling every read for
/// `camera_delay_ms` while it recognises a piece.
pub async fn camera_latency(
    cfg: &Config,
    camera_delay_ms: u64,
    cycles: u64,
) -> ScenarioResult<CameraLatencyReport> {
    let mut cfg = cfg.clone();
    cfg.emulator.camera_delay_ms = camera_delay_ms;
    let cell = LiveCell::start(&cfg).await?;
    tokio::time::sleep(Duration::from_millis(2500)).await;
    let run = cell.run_cycles(cycles, Duration::from_secs(90)).await;
    tokio::time::sleep(Duration::from_millis(2500)).await;
    let windows = cell.windows();
    let events = cell.emu.spylog_read(0).events;
    cell.shutdown().await;
    run?;

    let recognize = recognize_intervals(&events);
    let service = &cfg.emulator.service_time_ms;
    let drain = camera_delay_ms as f64 + service.io.max(service.jointtarget).max(service.robtarget);
    let overlaps = |w: &WindowStats| recognize.iter().any(|(s, e)| w.start_ms < *e && w.end_ms > *s);
    let streams = StreamKind::DATA
        .iter()
        .map(|&kind| {
            let mine: Vec<&WindowStats> =
                windows.iter().filter(|w| w.stream == kind && !w.warmup).collect();
            let idle: Vec<f64> = mine.iter().filter(|w| !overlaps(w)).map(|w| w.period_ms).collect();
            let recognize_max_ms = mine
                .iter()
                .filter(|w| overlaps(w))
                .map(|w| w.max_period_ms)
                .reduce(f64::max);
            let after_max_ms = recognize
                .iter()
                .filter_map(|(_, end)| {
                    mine.iter()
                        .find(|w| w.start_ms >= end + drain)
                        .map(|w| w.max_period_ms)
                })
                .collect();
            CameraStreamSummary {
                stream: kind,
                idle_mean_ms: (!idle.is_empty()).then(|| idle.iter().sum::<f64>() / idle.len() as f64),
                recognize_max_ms,
                after_max_ms,
            }
        })
        .collect();
    Ok(CameraLatencyReport {
        camera_delay_ms,
        cycles,
        recognize,
        streams,
        windows,
    })
}

pub fn judge_camera(r: &CameraLatencyReport) -> CriterionReport {
    let mut passed = r.recognize.len() as u64 >= r.cycles;
    let mut parts = vec![format!("{} recognition phases", r.recognize.len())];
    for s in &r.streams {
        let (Some(idle), Some(peak)) = (s.idle_mean_ms, s.recognize_max_ms) else {
            passed = false;
            parts.push(format!("{} missing windows", s.stream));
            continue;
        };
        let after = s.after_max_ms.iter().copied().fold(0.0, f64::max);
        let ok = peak >= 3.0 * idle
            && s.after_max_ms.len() == r.recognize.len()
            && after <= 1.5 * idle;
        passed &= ok;
        parts.push(format!(
            "{} idle {idle:.1} ms, peak {peak:.1} ms ({:.1}x), after {after:.1} ms",
            s.stream,
            peak / idle
        ));
    }
    CriterionReport::new(2, TITLES[1], passed, parts.join("; "), &r.streams)
}

// ---------------------------------------------------------------------------
// linear move repeatability

#[derive(Debug, Clone, Serialize)]
pub struct LinearRepeatReport {
    pub reps: usize,
    pub done: usize,
    pub tcp_errors_mm: Vec<f64>,
    pub failures: Vec<String>,
}

impl LinearRepeatReport {
    pub fn max_error_mm(&self) -> f64 {
        self.tcp_errors_mm.iter().copied().fold(0.0, f64::max)
    }
}

/// Waits until the twin reports joints exactly at `target`, then returns the
/// first robtarget sample taken at or after that instant.
async fn settled_tcp(twin: &TwinHandle, target: &JointConfig, timeout: Duration) -> Option<Pose> {
    let at = twin
        .wait_joints(timeout, |s| s.value.max_abs_diff(target) <= 1e-9)
        .await?;
    let deadline = tokio::time::Instant::now() + timeout;
    while tokio::time::Instant::now() < deadline {
        if let Some(tcp) = twin.store().tcp() {
            if tcp.timestamp_ms >= at.timestamp_ms {
                return Some(tcp.value);
            }
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    None
}

/// `reps` times: jog home, then move the TCP +100 mm along x.
pub async fn linear_repeatability(cfg: &Config, reps: usize) -> ScenarioResult<LinearRepeatReport> {
    let cell = LiveCell::start(cfg).await?;
    let gw = &cell.gateway;
    let home = forward_kinematics(&cfg.robot, &JointConfig::HOME)?;
    let expected = home.position + Vector3::new(100.0, 0.0, 0.0);
    let timeout = Duration::from_secs(10);
    let mut report = LinearRepeatReport {
        reps,
        done: 0,
        tcp_errors_mm: Vec::new(),
        failures: Vec::new(),
    };
    for rep in 0..reps {
        let outcome: ScenarioResult<f64> = async {
            let t = gw
                .jog(JogCommand {
                    mode: JogMode::Absolute,
                    joints: [0.0; JOINTS],
                })
                .await?;
            let t = gw.wait(t.id, timeout).await;
            if t.as_ref().map(|t| t.status) != Some(TicketStatus::Done) {
                return Err(ScenarioError(format!("homing jog ended as {t:?}")));
            }
            settled_tcp(gw.twin(), &JointConfig::HOME, timeout)
                .await
                .ok_or_else(|| ScenarioError("never settled at home".into()))?;
            let t = gw.linear_move(LinearCommand::new(100.0, 0.0, 0.0)).await?;
            let t = gw
                .wait(t.id, timeout)
                .await
                .ok_or_else(|| ScenarioError("linear ticket vanished".into()))?;
            if t.status != TicketStatus::Done {
                return Err(ScenarioError(format!(
                    "linear ticket {:?}: {}",
                    t.status,
                    t.reason.unwrap_or_default()
                )));
            }
            let target = JointConfig::from_degrees(t.target_deg.unwrap_or_default());
            let tcp = settled_tcp(gw.twin(), &target, timeout)
                .await
                .ok_or_else(|| ScenarioError("never settled at target".into()))?;
            Ok((tcp.position - expected).norm())
        }
        .await;
        match outcome {
            Ok(err) => {
                report.done += 1;
                report.tcp_errors_mm.push(err);
            }
            Err(e) => report.failures.push(format!("rep {rep}: {e}")),
        }
    }
    cell.shutdown().await;
    Ok(report)
}

pub fn judge_linear(r: &LinearRepeatReport) -> CriterionReport {
    let within = r.tcp_errors_mm.iter().filter(|e| **e <= 0.01).count();
    let passed = r.done == r.reps && within == r.reps;
    let summary = format!(
        "{}/{} done, {}/{} within 0.01 mm, max error {:.2e} mm",
        r.done,
        r.reps,
        within,
        r.reps,
        r.max_error_mm()
    );
    CriterionReport::new(3, TITLES[2], passed, summary, r)
}

// ---------------------------------------------------------------------------
// trajectory mapping

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrajectoryReport {
    pub joint_rows: usize,
    pub tcp_rows: usize,
    /// Joint and robtarget samples taken on the same controller tick.
    pub matched_pairs: usize,
    pub max_fk_vs_robtarget_mm: f64,
    pub max_fk_vs_solver_mm: f64,
    pub max_internal_mm: f64,
    /// Twin joint rows compared against the emulator's own log at equal time.
    pub emulator_matches: usize,
    pub max_twin_vs_emulator_mm: f64,
}

/// Records one stacking cycle through the twin and cross-checks every pose
/// source.
pub async fn trajectory_mapping(cfg: &Config) -> ScenarioResult<TrajectoryReport> {
    let cell = LiveCell::start(cfg).await?;
    let solver = SolverService::bind(loopback(), cfg.robot.clone(), cfg.solver.clone()).await?;
    cell.twin().store().start_recording();
    let run = cell.run_cycles(1, Duration::from_secs(90)).await;
    cell.twin().store().stop_recording();
    let rec = cell.twin().store().trajectory();
    let emulator_log = cell.emu.trajectory();
    cell.shutdown().await;
    run?;

    let mut r = TrajectoryReport {
        joint_rows: rec.joints().len(),
        tcp_rows: rec.tcp().len(),
        ..TrajectoryReport::default()
    };
    let mut client = SolverClient::connect(solver.addr()).await?;
    for row in rec.joints() {
        let fk = forward_kinematics(&cfg.robot, &row.q)?;
        let chain = Pose::from_isometry(&link_frames(&cfg.robot, &row.q)?[JOINTS]);
        let line = serde_json::json!({ "fk": row.q.to_degrees() }).to_string();
        let SolverReply::Fk(local) = handle_line(&cfg.robot, &cfg.solver, &line) else {
            return Err(ScenarioError("in-process solver refused fk".into()));
        };
        let local = Vector3::from(local.pos);
        let internal = (fk.position - chain.position)
            .norm()
            .max((fk.position - local).norm())
            .max((row.pose.position - fk.position).norm());
        r.max_internal_mm = r.max_internal_mm.max(internal);

        let remote = match client.request(&SolverRequest::Fk { fk: row.q.to_degrees() }).await? {
            SolverReply::Fk(p) => Vector3::from(p.pos),
            other => return Err(ScenarioError(format!("solver socket replied {other:?}"))),
        };
        r.max_fk_vs_solver_mm = r.max_fk_vs_solver_mm.max((fk.position - remote).norm());

        for tcp in rec.tcp().iter().filter(|t| t.t_ms == row.t_ms) {
            r.matched_pairs += 1;
            r.max_fk_vs_robtarget_mm = r
                .max_fk_vs_robtarget_mm
                .max((fk.position - tcp.pose.position).norm());
        }
        if let Ok(i) = emulator_log.binary_search_by_key(&row.t_ms, |s| s.timestamp_ms) {
            r.emulator_matches += 1;
            r.max_twin_vs_emulator_mm = r
                .max_twin_vs_emulator_mm
                .max((fk.position - emulator_log[i].pose.position).norm());
        }
    }
    solver.shutdown().await;
    Ok(r)
}

pub fn judge_trajectory(r: &TrajectoryReport) -> CriterionReport {
    let passed = r.joint_rows > 0
        && r.matched_pairs > 0
        && r.max_fk_vs_robtarget_mm <= 1e-3
        && r.max_fk_vs_solver_mm <= 1e-3
        && r.max_internal_mm <= 1e-6;
    let summary = format!(
        "{} joint rows, {} tick-aligned pairs; FK vs robtarget {:.1e} mm, FK vs solver {:.1e} mm, internal paths {:.1e} mm",
        r.joint_rows, r.matched_pairs, r.max_fk_vs_robtarget_mm, r.max_fk_vs_solver_mm, r.max_internal_mm
    );
    CriterionReport::new(4, TITLES[3], passed, summary, r)
}
