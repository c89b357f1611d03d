use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use nalgebra::Vector3;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::emulator::CyclePhase;
use crate::kinematics::{
    forward_kinematics, solve_ik, IkProblem, JointConfig, SolverSettings, JOINTS,
};
use crate::twin::{unix_now_ms, ClientError, RwsClient, TwinHandle};
use crate::wire::paths::{self, ExecutionAction};
use crate::wire::{ErrorMsg, IoSetMsg, JogTargetMsg};

/// Per-joint tolerance for a jog to count as settled, degrees.
pub const SETTLE_TOL_DEG: f64 = 0.05;
/// Joints older than this are too stale to seed a move, ms.
pub const MAX_JOINT_AGE_MS: f64 = 100.0;
pub const DEFAULT_MAX_LINEAR_STEP_MM: f64 = 300.0;
const TICKET_HISTORY: usize = 4096;
/// Added to the doubled nominal duration before a jog ticket fails: covers
/// one polling round trip and the command round trip itself.
const TIMEOUT_ALLOWANCE: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JogMode {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JogCommand {
    pub mode: JogMode,
    /// Degrees.
    pub joints: [f64; JOINTS],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearCommand {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    #[serde(default = "default_true")]
    pub keep_orientation: bool,
}

fn default_true() -> bool {
    true
}

impl LinearCommand {
    pub fn new(dx: f64, dy: f64, dz: f64) -> Self {
        Self {
            dx,
            dy,
            dz,
            keep_orientation: true,
        }
    }

    pub fn delta(&self) -> Vector3<f64> {
        Vector3::new(self.dx, self.dy, self.dz)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("controller unavailable: {0}")]
    Unavailable(String),
    #[error("joint data is {age_ms:.0} ms old; retry shortly")]
    Stale { age_ms: f64 },
    #[error("joint {joint} target {value_deg:.3} deg outside [{min_deg:.1}, {max_deg:.1}]")]
    JointLimit {
        joint: usize,
        value_deg: f64,
        min_deg: f64,
        max_deg: f64,
    },
    #[error("busy: {0}")]
    Busy(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("target unreachable: best residual {pos_err_mm:.4} mm / {orient_err_rad:.5} rad after {iterations} iterations")]
    Unreachable {
        pos_err_mm: f64,
        orient_err_rad: f64,
        iterations: usize,
    },
    #[error("controller rejected the request ({status}): {}", body.message)]
    Controller { status: u16, body: ErrorMsg },
}

impl GatewayError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// HTTP status the proxy reports for this error.
    pub fn http_status(&self) -> u16 {
        match self {
            Self::Unavailable(_) | Self::Stale { .. } => 503,
            Self::JointLimit { .. } | Self::Invalid { .. } => 400,
            Self::Busy(_) | Self::Conflict(_) => 409,
            Self::Unreachable { .. } => 422,
            Self::Controller { status, .. } => *status,
        }
    }
}

impl From<ClientError> for GatewayError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Rejected { status, body } => match (status, body.code.as_str()) {
                (409, "busy") => Self::Busy(body.message),
                (409, _) => Self::Conflict(body.message),
                _ => Self::Controller { status, body },
            },
            other => Self::Unavailable(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TicketStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkSummary {
    pub converged: bool,
    pub iterations: usize,
    pub pos_err_mm: f64,
    pub orient_err_rad: f64,
    pub solution_deg: [f64; JOINTS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: u64,
    pub kind: String,
    pub status: TicketStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_deg: Option<[f64; JOINTS]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ik: Option<IkSummary>,
    pub created_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_ms: Option<f64>,
}

#[derive(Default)]
struct TicketBook {
    tickets: HashMap<u64, watch::Sender<Ticket>>,
}

/// Sends control commands on behalf of the twin and tracks their outcome.
pub struct MotionGateway {
    twin: Arc<TwinHandle>,
    client: RwsClient,
    solver: SolverSettings,
    max_linear_step_mm: f64,
    dispatch: tokio::sync::Mutex<()>,
    in_flight: Arc<AtomicBool>,
    next_id: AtomicU64,
    book: Mutex<TicketBook>,
}

impl MotionGateway {
    pub fn new(twin: Arc<TwinHandle>, solver: SolverSettings) -> Result<Self, GatewayError> {
        let cfg = twin.config();
        let client = RwsClient::new(
            &cfg.controller_url,
            cfg.credentials.clone(),
            cfg.seed.wrapping_add(0xC0DE),
        )
        .map_err(|e| GatewayError::Unavailable(e.to_string()))?;
        Ok(Self {
            twin,
            client,
            solver,
            max_linear_step_mm: DEFAULT_MAX_LINEAR_STEP_MM,
            dispatch: tokio::sync::Mutex::new(()),
            in_flight: Arc::new(AtomicBool::new(false)),
            next_id: AtomicU64::new(1),
            book: Mutex::new(TicketBook::default()),
        })
    }

    pub fn with_max_linear_step(mut self, mm: f64) -> Self {
        self.max_linear_step_mm = mm;
        self
    }

    pub fn twin(&self) -> &Arc<TwinHandle> {
        &self.twin
    }

    pub fn solver_settings(&self) -> &SolverSettings {
        &self.solver
    }

    fn open_ticket(&self, kind: &str) -> (u64, watch::Sender<Ticket>) {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, _) = watch::channel(Ticket {
            id,
            kind: kind.to_string(),
            status: TicketStatus::Pending,
            reason: None,
            target_deg: None,
            ik: None,
            created_ms: unix_now_ms(),
            finished_ms: None,
        });
        let mut book = self.book.lock();
        if book.tickets.len() >= TICKET_HISTORY {
            if let Some(oldest) = book.tickets.keys().min().copied() {
                book.tickets.remove(&oldest);
            }
        }
        book.tickets.insert(id, tx.clone());
        (id, tx)
    }

    pub fn ticket(&self, id: u64) -> Option<Ticket> {
        self.book.lock().tickets.get(&id).map(|t| t.borrow().clone())
    }

    /// Waits until the ticket leaves `Pending` or `timeout` passes.
    pub async fn wait(&self, id: u64, timeout: Duration) -> Option<Ticket> {
        let mut rx = self.book.lock().tickets.get(&id)?.subscribe();
        let fut = async move {
            rx.wait_for(|t| t.status != TicketStatus::Pending)
                .await
                .ok()
                .map(|t| t.clone())
        };
        match tokio::time::timeout(timeout, fut).await {
            Ok(t) => t,
            Err(_) => self.ticket(id),
        }
    }

    fn check_connected(&self) -> Result<(), GatewayError> {
        let c = self.twin.store().connection();
        if c.state == crate::twin::ConnectionState::Down {
            return Err(GatewayError::Unavailable(
                c.reason.unwrap_or_else(|| "twin is down".into()),
            ));
        }
        Ok(())
    }

    fn limit_check(&self, target_deg: &[f64; JOINTS]) -> Result<JointConfig, GatewayError> {
        if let Some(i) = target_deg.iter().position(|v| !v.is_finite()) {
            return Err(GatewayError::invalid("joints", format!("joint {} is not finite", i + 1)));
        }
        let q = JointConfig::from_degrees(*target_deg);
        if let Some(i) = self.twin.dh().limit_violation(&q) {
            let lim = self.twin.dh().limits()[i];
            return Err(GatewayError::JointLimit {
                joint: i + 1,
                value_deg: target_deg[i],
                min_deg: lim.min.to_degrees(),
                max_deg: lim.max.to_degrees(),
            });
        }
        Ok(q)
    }

    fn interlock(&self) -> Result<(), GatewayError> {
        if self.in_flight.load(Ordering::Acquire) {
            return Err(GatewayError::Busy("a motion is already in flight".into()));
        }
        match self.twin.store().phase() {
            Some(p) if p != CyclePhase::Idle => {
                Err(GatewayError::Busy(format!("stacking program owns the arm (phase {p})")))
            }
            _ => Ok(()),
        }
    }

    fn fresh_joints(&self) -> Result<JointConfig, GatewayError> {
        match self.twin.store().joints() {
            None => Err(GatewayError::Unavailable("no joint data yet".into())),
            Some(s) => {
                let age_ms = s.age_ms(unix_now_ms());
                if age_ms > MAX_JOINT_AGE_MS {
                    Err(GatewayError::Stale { age_ms })
                } else {
                    Ok(s.value)
                }
            }
        }
    }

    pub async fn pointer_op(&self, action: ExecutionAction) -> Result<Ticket, GatewayError> {
        self.check_connected()?;
        let _guard = self.dispatch.lock().await;
        self.client
            .post::<()>(&paths::execution_uri(action), None)
            .await?;
        let (_, tx) = self.open_ticket(&format!("pointer:{action}"));
        Ok(finish(&tx, TicketStatus::Done, None))
    }

    pub async fn set_do(&self, name: &str, value: u8) -> Result<Ticket, GatewayError> {
        if value > 1 {
            return Err(GatewayError::invalid("value", "must be 0 or 1"));
        }
        self.check_connected()?;
        let _guard = self.dispatch.lock().await;
        self.client
            .post(&paths::io_set_uri(name), Some(&IoSetMsg { value }))
            .await?;
        let (_, tx) = self.open_ticket(&format!("do:{name}"));
        Ok(finish(&tx, TicketStatus::Done, None))
    }

    /// Validates, sends the joint target and returns a ticket that settles
    /// from the joints stream.
    pub async fn jog(&self, cmd: JogCommand) -> Result<Ticket, GatewayError> {
        self.check_connected()?;
        let target_deg = match cmd.mode {
            JogMode::Absolute => cmd.joints,
            JogMode::Relative => {
                let cur = self.fresh_joints()?.to_degrees();
                std::array::from_fn(|i| cur[i] + cmd.joints[i])
            }
        };
        self.limit_check(&target_deg)?;
        self.send_motion("jog", target_deg, None).await
    }

    /// Solves IK for the current TCP shifted by the command's delta, seeded
    /// with the current joints, then jogs to the solution.
    pub async fn linear_move(&self, cmd: LinearCommand) -> Result<Ticket, GatewayError> {
        let delta = cmd.delta();
        if !delta.iter().all(|v| v.is_finite()) {
            return Err(GatewayError::invalid("delta", "components must be finite"));
        }
        if delta.norm() > self.max_linear_step_mm {
            return Err(GatewayError::invalid(
                "delta",
                format!("{:.1} mm exceeds the {:.0} mm step limit", delta.norm(), self.max_linear_step_mm),
            ));
        }
        self.check_connected()?;
        self.interlock()?;
        let seed = self.fresh_joints()?;
        let dh = self.twin.dh();
        let current = forward_kinematics(dh, &seed)
            .map_err(|e| GatewayError::invalid("joints", e.to_string()))?;
        let mut problem = IkProblem::new(current.translated(delta), seed, &self.solver);
        if !cmd.keep_orientation {
            for i in 3..6 {
                problem.weights_task[i] = 0.0;
            }
        }
        let result = solve_ik(dh, &problem).map_err(|e| GatewayError::Unreachable {
            pos_err_mm: f64::NAN,
            orient_err_rad: f64::NAN,
            iterations: match e {
                crate::kinematics::KinematicsError::NumericFailure { iteration, .. } => iteration,
                _ => 0,
            },
        })?;
        if !result.converged {
            return Err(GatewayError::Unreachable {
                pos_err_mm: result.pos_err_mm,
                orient_err_rad: result.orient_err_rad,
                iterations: result.iterations,
            });
        }
        let ik = IkSummary {
            converged: true,
            iterations: result.iterations,
            pos_err_mm: result.pos_err_mm,
            orient_err_rad: result.orient_err_rad,
            solution_deg: result.solution.to_degrees(),
        };
        self.limit_check(&ik.solution_deg)?;
        self.send_motion("linear", ik.solution_deg, Some(ik)).await
    }

    async fn send_motion(
        &self,
        kind: &str,
        target_deg: [f64; JOINTS],
        ik: Option<IkSummary>,
    ) -> Result<Ticket, GatewayError> {
        let _guard = self.dispatch.lock().await;
        self.interlock()?;
        let target = JointConfig::from_degrees(target_deg);
        let start = self
            .twin
            .store()
            .joints()
            .map_or(target, |s| s.value);
        self.in_flight.store(true, Ordering::Release);
        if let Err(e) = self
            .client
            .post(&paths::symbol_update_uri(), Some(&JogTargetMsg { joints: target_deg }))
            .await
        {
            self.in_flight.store(false, Ordering::Release);
            return Err(e.into());
        }
        let (_, tx) = self.open_ticket(kind);
        tx.send_modify(|t| {
            t.target_deg = Some(target_deg);
            t.ik = ik;
        });
        let ticket = tx.borrow().clone();

        let nominal = nominal_duration(&start, &target, self.twin.dh().speed_limits());
        let timeout = nominal * 2 + TIMEOUT_ALLOWANCE;
        let twin = Arc::clone(&self.twin);
        let in_flight = Arc::clone(&self.in_flight);
        tokio::spawn(async move {
            let settled = twin
                .wait_joints(timeout, |s| within_deg(&s.value, &target, SETTLE_TOL_DEG))
                .await;
            in_flight.store(false, Ordering::Release);
            match settled {
                Some(_) => finish(&tx, TicketStatus::Done, None),
                None => finish(
                    &tx,
                    TicketStatus::Failed,
                    Some(format!("target not reached within {} ms", timeout.as_millis())),
                ),
            };
        });
        Ok(ticket)
    }
}

fn finish(tx: &watch::Sender<Ticket>, status: TicketStatus, reason: Option<String>) -> Ticket {
    tx.send_modify(|t| {
        t.status = status;
        t.reason = reason;
        t.finished_ms = Some(unix_now_ms());
    });
    tx.borrow().clone()
}

fn within_deg(a: &JointConfig, b: &JointConfig, tol_deg: f64) -> bool {
    a.max_abs_diff(b) <= tol_deg.to_radians()
}

/// Time the slowest joint needs at full speed.
pub fn nominal_duration(from: &JointConfig, to: &JointConfig, speed_limits: &[f64; JOINTS]) -> Duration {
    let s = (0..JOINTS)
        .map(|i| (to.0[i] - from.0[i]).abs() / speed_limits[i])
        .fold(0.0, f64::max);
    Duration::from_secs_f64(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_statuses() {
        assert_eq!(GatewayError::Busy("x".into()).http_status(), 409);
        assert_eq!(
            GatewayError::Unreachable {
                pos_err_mm: 1.0,
                orient_err_rad: 0.0,
                iterations: 200
            }
            .http_status(),
            422
        );
        let e: GatewayError = ClientError::Rejected {
            status: 409,
            body: ErrorMsg::new("busy", "cycle"),
        }
        .into();
        assert!(matches!(e, GatewayError::Busy(_)));
    }

    #[test]
    fn nominal_duration_uses_slowest_joint() {
        let limits = crate::kinematics::DhTable::irb120().speed_limits().to_owned();
        let d = nominal_duration(
            &JointConfig::HOME,
            &JointConfig::from_degrees([10.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            &limits,
        );
        assert!((d.as_secs_f64() - 0.04).abs() < 1e-9);
    }

    #[test]
    fn linear_command_defaults_to_keeping_orientation() {
        let c: LinearCommand = serde_json::from_str(r#"{"dx":100,"dy":0,"dz":0}"#).unwrap();
        assert!(c.keep_orientation);
    }
}
