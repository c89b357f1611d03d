//! Deterministic model of the stacking cell and its program.
//!
//! [`Simulation`] is a plain state machine advanced by [`Simulation::tick`];
//! the HTTP service owns one instance on its ticking task and the model
//! checker drives one directly.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use nalgebra::Vector3;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::motion::{MotionExecutor, MoveAbsJ};
use super::settings::{EmulatorSettings, WorkcellSettings};
use crate::kinematics::{
    forward_kinematics, solve_ik, DhTable, IkProblem, JointConfig, Pose, SolverSettings, JOINTS,
};
use crate::wire::paths::ExecutionAction;
use crate::wire::{IoSignal, LogLevel, SignalKind, SpyEvent, SpyLogMsg};

pub const DO_SQUARE: &str = "DO_3";
pub const DO_RECTANGLE: &str = "DO_4";
pub const DO_CIRCLE: &str = "DO_5";
pub const DO_GRIP: &str = "DO_GRIP";
pub const DO_CONVEYOR: &str = "DO_CONVEYOR";
pub const DI_IR: &str = "DI_IR";

/// Outputs the stacking program drives; a manual write overrides them until
/// the next phase transition.
const SCRIPT_OUTPUTS: [&str; 5] = [DO_SQUARE, DO_RECTANGLE, DO_CIRCLE, DO_GRIP, DO_CONVEYOR];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Rectangle,
    Circle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Rectangle, Shape::Circle];

    /// Indicator output lit when this shape is recognised.
    pub fn signal(self) -> &'static str {
        match self {
            Shape::Square => DO_SQUARE,
            Shape::Rectangle => DO_RECTANGLE,
            Shape::Circle => DO_CIRCLE,
        }
    }

    pub fn from_signal(name: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| s.signal() == name)
    }

    fn index(self) -> usize {
        match self {
            Shape::Square => 0,
            Shape::Rectangle => 1,
            Shape::Circle => 2,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Square => "square",
            Shape::Rectangle => "rectangle",
            Shape::Circle => "circle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CyclePhase {
    Idle,
    Spawn,
    Recognize,
    Convey,
    AtB,
    Pick,
    Place,
    Return,
}

impl CyclePhase {
    pub const ALL: [CyclePhase; 8] = [
        CyclePhase::Idle,
        CyclePhase::Spawn,
        CyclePhase::Recognize,
        CyclePhase::Convey,
        CyclePhase::AtB,
        CyclePhase::Pick,
        CyclePhase::Place,
        CyclePhase::Return,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CyclePhase::Idle => "IDLE",
            CyclePhase::Spawn => "SPAWN",
            CyclePhase::Recognize => "RECOGNIZE",
            CyclePhase::Convey => "CONVEY",
            CyclePhase::AtB => "AT_B",
            CyclePhase::Pick => "PICK",
            CyclePhase::Place => "PLACE",
            CyclePhase::Return => "RETURN",
        }
    }

    pub fn parse(s: &str) -> Option<CyclePhase> {
        CyclePhase::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for CyclePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RapidExecutionState {
    pub pointer_at_main: bool,
    pub running: bool,
    pub cycle_phase: CyclePhase,
    pub cycle_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceLocation {
    A,
    Conveyor,
    B,
    Gripped,
    PalletSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub shape: Shape,
    pub location: PieceLocation,
    pub recognized: bool,
    /// Fraction of the belt travelled, 0..=1.
    pub conveyor_progress: f64,
}

impl Piece {
    /// A piece is active from spawn until it is released on the pallet.
    pub fn is_active(&self) -> bool {
        self.location != PieceLocation::PalletSlot
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkcellState {
    pub piece: Option<Piece>,
    /// Stack counts indexed square, rectangle, circle.
    pub pallet: [u32; 3],
    pub camera_busy: bool,
    io: Vec<IoSignal>,
    overrides: HashSet<String>,
}

impl WorkcellState {
    pub fn io(&self) -> &[IoSignal] {
        &self.io
    }

    pub fn signal(&self, name: &str) -> Option<&IoSignal> {
        self.io.iter().find(|s| s.name == name)
    }

    pub fn is_high(&self, name: &str) -> bool {
        self.signal(name).is_some_and(|s| s.value == 1)
    }

    pub fn is_overridden(&self, name: &str) -> bool {
        self.overrides.contains(name)
    }

    pub fn pallet_count(&self, shape: Shape) -> u32 {
        self.pallet[shape.index()]
    }

    fn set(&mut self, name: &str, value: u8) {
        if let Some(s) = self.io.iter_mut().find(|s| s.name == name) {
            s.value = value;
        }
    }
}

/// Rejections from the control endpoints.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("busy: {0}")]
    Busy(String),
    #[error("joint {joint} value {value_deg:.3} deg outside [{min_deg:.1}, {max_deg:.1}]")]
    JointLimit {
        /// 1-based
        joint: usize,
        value_deg: f64,
        min_deg: f64,
        max_deg: f64,
    },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("unknown signal {0}")]
    NotFound(String),
    #[error("signal {0} is an input and cannot be written")]
    Forbidden(String),
}

#[derive(Debug, thiserror::Error)]
pub enum EmulatorError {
    #[error("waypoint `{0}` is not reachable")]
    Unreachable(String),
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("cannot bind: {0}")]
    Bind(#[from] std::io::Error),
}

/// Bounded, seq-ordered program event log.
#[derive(Debug)]
pub struct SpyLog {
    events: VecDeque<SpyEvent>,
    next_seq: u64,
    capacity: usize,
}

impl SpyLog {
    pub fn new(capacity: usize) -> Self {
        Self {
            events: VecDeque::new(),
            next_seq: 1,
            capacity: capacity.max(1),
        }
    }

    fn push(&mut self, timestamp_ms: u64, level: LogLevel, text: String) {
        if self.events.len() == self.capacity {
            self.events.pop_front();
        }
        self.events.push_back(SpyEvent {
            seq: self.next_seq,
            timestamp_ms,
            level,
            text,
        });
        self.next_seq += 1;
    }

    /// Events with `seq > since`, oldest first.
    pub fn read(&self, since: u64) -> SpyLogMsg {
        let start = self.events.partition_point(|e| e.seq <= since);
        let events: Vec<SpyEvent> = self.events.range(start..).cloned().collect();
        let next_since = events.last().map_or(since, |e| e.seq);
        SpyLogMsg { events, next_since }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Joint sample logged every tick, with the TCP pose served for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub timestamp_ms: u64,
    pub q: JointConfig,
    pub pose: Pose,
}

/// What request handlers read: one consistent view per tick.
#[derive(Debug, Clone)]
pub struct SimSnapshot {
    pub timestamp_ms: u64,
    pub q: JointConfig,
    pub pose: Pose,
    pub io: Vec<IoSignal>,
    pub rapid: RapidExecutionState,
    pub camera_busy: bool,
    pub piece: Option<Piece>,
    pub pallet: [u32; 3],
}

#[derive(Debug, Clone)]
struct Waypoints {
    above_b: JointConfig,
    at_b: JointConfig,
    /// `[shape][level] -> (above slot, slot)`
    slots: Vec<Vec<(JointConfig, JointConfig)>>,
}

pub struct Simulation {
    dh: DhTable,
    cell: WorkcellSettings,
    rapid: RapidExecutionState,
    workcell: WorkcellState,
    motion: MotionExecutor,
    waypoints: Waypoints,
    paused: bool,
    phase_elapsed_s: f64,
    shape_cursor: usize,
    tick_count: u64,
    tick_ms: f64,
    epoch_unix_ms: u64,
    pose: Pose,
    spylog: Arc<RwLock<SpyLog>>,
    trajectory: Arc<Mutex<VecDeque<TrajectorySample>>>,
    trajectory_capacity: usize,
}

fn solve_waypoint(
    dh: &DhTable,
    name: &str,
    pos: [f64; 3],
    orient: [f64; 4],
    seed: JointConfig,
) -> Result<JointConfig, EmulatorError> {
    let target = Pose::from_wxyz(pos, orient)
        .map_err(|e| EmulatorError::Settings(format!("{name}: {e}")))?;
    let settings = SolverSettings {
        max_iters: 500,
        ..SolverSettings::default()
    };
    let res = solve_ik(dh, &IkProblem::new(target, seed, &settings))
        .map_err(|_| EmulatorError::Unreachable(name.to_string()))?;
    if !res.converged {
        return Err(EmulatorError::Unreachable(name.to_string()));
    }
    Ok(res.solution)
}

fn build_waypoints(dh: &DhTable, cell: &WorkcellSettings) -> Result<Waypoints, EmulatorError> {
    let up = |p: [f64; 3]| [p[0], p[1], p[2] + cell.approach_mm];
    let seed = JointConfig::from_degrees([0.0, 20.0, 20.0, 0.0, 50.0, 0.0]);
    let above_b = solve_waypoint(dh, "above B", up(cell.location_b), cell.tool_down, seed)?;
    let at_b = solve_waypoint(dh, "B", cell.location_b, cell.tool_down, above_b)?;
    let bases = [cell.pallet_square, cell.pallet_rectangle, cell.pallet_circle];
    let mut slots = Vec::new();
    for (shape, base) in Shape::ALL.iter().zip(bases) {
        let mut levels = Vec::new();
        let mut seed = above_b;
        for level in 0..cell.max_stack.max(1) {
            let p = [base[0], base[1], base[2] + f64::from(level) * cell.stack_mm];
            let name = format!("{shape} slot level {level}");
            let above = solve_waypoint(dh, &format!("above {name}"), up(p), cell.tool_down, seed)?;
            let slot = solve_waypoint(dh, &name, p, cell.tool_down, above)?;
            levels.push((above, slot));
            seed = above;
        }
        slots.push(levels);
    }
    Ok(Waypoints {
        above_b,
        at_b,
        slots,
    })
}

fn initial_io(cell: &WorkcellSettings) -> Vec<IoSignal> {
    let mut io = Vec::new();
    let mut push = |name: String, kind| io.push(IoSignal { name, kind, value: 0 });
    for i in 1..=cell.generic_outputs.max(5) {
        push(format!("DO_{i}"), SignalKind::DO);
    }
    push(DO_GRIP.into(), SignalKind::DO);
    push(DO_CONVEYOR.into(), SignalKind::DO);
    for i in 1..=cell.generic_inputs {
        push(format!("DI_{i}"), SignalKind::DI);
    }
    push(DI_IR.into(), SignalKind::DI);
    io
}

impl Simulation {
    pub fn new(
        dh: DhTable,
        settings: &EmulatorSettings,
        cell: &WorkcellSettings,
        epoch_unix_ms: u64,
    ) -> Result<Self, EmulatorError> {
        if !(settings.tick_hz.is_finite() && settings.tick_hz > 0.0) {
            return Err(EmulatorError::Settings("tick_hz must be positive".into()));
        }
        if !(cell.program_speed > 0.0 && cell.program_speed <= 1.0) {
            return Err(EmulatorError::Settings(
                "program_speed must lie in (0, 1]".into(),
            ));
        }
        let waypoints = build_waypoints(&dh, cell)?;
        let home = JointConfig::HOME;
        let pose = forward_kinematics(&dh, &home).expect("home is finite");
        let motion = MotionExecutor::new(home, settings.tick_hz, *dh.speed_limits());
        let sim = Self {
            cell: cell.clone(),
            rapid: RapidExecutionState {
                pointer_at_main: true,
                running: false,
                cycle_phase: CyclePhase::Idle,
                cycle_count: 0,
            },
            workcell: WorkcellState {
                piece: None,
                pallet: [0; 3],
                camera_busy: false,
                io: initial_io(cell),
                overrides: HashSet::new(),
            },
            motion,
            waypoints,
            paused: false,
            phase_elapsed_s: 0.0,
            shape_cursor: 0,
            tick_count: 0,
            tick_ms: 1000.0 / settings.tick_hz,
            epoch_unix_ms,
            pose,
            spylog: Arc::new(RwLock::new(SpyLog::new(settings.spylog_capacity))),
            trajectory: Arc::new(Mutex::new(VecDeque::new())),
            trajectory_capacity: settings.trajectory_capacity,
            dh,
        };
        sim.log_trajectory();
        Ok(sim)
    }

    pub fn dh(&self) -> &DhTable {
        &self.dh
    }

    pub fn rapid(&self) -> &RapidExecutionState {
        &self.rapid
    }

    pub fn workcell(&self) -> &WorkcellState {
        &self.workcell
    }

    pub fn motion(&self) -> &MotionExecutor {
        &self.motion
    }

    pub fn current_q(&self) -> JointConfig {
        self.motion.current()
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn tick_count(&self) -> u64 {
        self.tick_count
    }

    pub fn tick_s(&self) -> f64 {
        self.tick_ms / 1000.0
    }

    pub fn timestamp_ms(&self) -> u64 {
        self.epoch_unix_ms + (self.tick_count as f64 * self.tick_ms).round() as u64
    }

    pub fn spylog(&self) -> Arc<RwLock<SpyLog>> {
        Arc::clone(&self.spylog)
    }

    pub fn trajectory(&self) -> Arc<Mutex<VecDeque<TrajectorySample>>> {
        Arc::clone(&self.trajectory)
    }

    pub fn spylog_read(&self, since: u64) -> SpyLogMsg {
        self.spylog.read().read(since)
    }

    pub fn snapshot(&self) -> SimSnapshot {
        SimSnapshot {
            timestamp_ms: self.timestamp_ms(),
            q: self.motion.current(),
            pose: self.pose,
            io: self.workcell.io.clone(),
            rapid: self.rapid,
            camera_busy: self.workcell.camera_busy,
            piece: self.workcell.piece,
            pallet: self.workcell.pallet,
        }
    }

    fn log(&self, level: LogLevel, text: String) {
        self.spylog.write().push(self.timestamp_ms(), level, text);
    }

    fn log_trajectory(&self) {
        let mut t = self.trajectory.lock();
        if t.len() >= self.trajectory_capacity.max(1) {
            t.pop_front();
        }
        t.push_back(TrajectorySample {
            timestamp_ms: self.timestamp_ms(),
            q: self.motion.current(),
            pose: self.pose,
        });
    }

    /// Advances the clock by one tick.
    pub fn tick(&mut self) {
        self.tick_count += 1;
        let before = self.motion.current();
        if !self.paused {
            self.motion.step();
        }
        if self.motion.current() != before {
            self.pose = forward_kinematics(&self.dh, &self.motion.current())
                .expect("executor keeps joints finite");
        }
        if self.rapid.running {
            self.advance_cycle();
        }
        self.apply_script_outputs();
        self.log_trajectory();
    }

    fn advance_cycle(&mut self) {
        let dt = self.tick_s();
        self.phase_elapsed_s += dt;
        match self.rapid.cycle_phase {
            CyclePhase::Idle => self.transition(CyclePhase::Spawn),
            CyclePhase::Spawn => {
                if self.phase_elapsed_s >= self.cell.spawn_s {
                    self.transition(CyclePhase::Recognize);
                }
            }
            CyclePhase::Recognize => {
                if self.phase_elapsed_s >= self.cell.recognize_s {
                    if let Some(p) = self.workcell.piece.as_mut() {
                        p.recognized = true;
                    }
                    self.transition(CyclePhase::Convey);
                }
            }
            CyclePhase::Convey => {
                let belt_on = self.workcell.is_high(DO_CONVEYOR);
                let step = dt / self.cell.convey_s.max(1e-9);
                let mut arrived = false;
                if let Some(p) = self.workcell.piece.as_mut() {
                    if belt_on {
                        p.conveyor_progress = (p.conveyor_progress + step).min(1.0);
                    }
                    arrived = p.conveyor_progress >= 1.0 - 1e-9;
                }
                if arrived {
                    self.transition(CyclePhase::AtB);
                }
            }
            CyclePhase::AtB => {
                if self.phase_elapsed_s >= self.cell.settle_s {
                    self.transition(CyclePhase::Pick);
                }
            }
            CyclePhase::Pick => {
                if self.motion.is_idle() {
                    if let Some(p) = self.workcell.piece.as_mut() {
                        p.location = PieceLocation::Gripped;
                    }
                    self.transition(CyclePhase::Place);
                }
            }
            CyclePhase::Place => {
                if self.motion.is_idle() {
                    if let Some(p) = self.workcell.piece.as_mut() {
                        p.location = PieceLocation::PalletSlot;
                        self.workcell.pallet[p.shape.index()] += 1;
                    }
                    self.transition(CyclePhase::Return);
                }
            }
            CyclePhase::Return => {
                if self.motion.is_idle() {
                    self.workcell.piece = None;
                    self.rapid.cycle_count += 1;
                    self.shape_cursor = (self.shape_cursor + 1) % Shape::ALL.len();
                    self.transition(CyclePhase::Spawn);
                }
            }
        }
    }

    fn program_move(&mut self, target: JointConfig) {
        self.motion.enqueue(MoveAbsJ {
            target,
            speed: self.cell.program_speed,
        });
    }

    fn slot_waypoints(&self, shape: Shape) -> (JointConfig, JointConfig) {
        let levels = &self.waypoints.slots[shape.index()];
        let level = (self.workcell.pallet_count(shape) as usize).min(levels.len() - 1);
        levels[level]
    }

    fn transition(&mut self, next: CyclePhase) {
        self.rapid.cycle_phase = next;
        self.phase_elapsed_s = 0.0;
        self.workcell.overrides.clear();
        self.workcell.camera_busy = next == CyclePhase::Recognize;
        let shape = Shape::ALL[self.shape_cursor];
        match next {
            CyclePhase::Spawn => {
                self.workcell.piece = Some(Piece {
                    shape,
                    location: PieceLocation::A,
                    recognized: false,
                    conveyor_progress: 0.0,
                });
            }
            CyclePhase::Convey => {
                if let Some(p) = self.workcell.piece.as_mut() {
                    p.location = PieceLocation::Conveyor;
                }
            }
            CyclePhase::AtB => {
                if let Some(p) = self.workcell.piece.as_mut() {
                    p.location = PieceLocation::B;
                }
            }
            CyclePhase::Pick => {
                self.program_move(self.waypoints.above_b);
                self.program_move(self.waypoints.at_b);
            }
            CyclePhase::Place => {
                let piece_shape = self.workcell.piece.map_or(shape, |p| p.shape);
                let (above, slot) = self.slot_waypoints(piece_shape);
                self.program_move(self.waypoints.above_b);
                self.program_move(above);
                self.program_move(slot);
            }
            CyclePhase::Return => {
                let piece_shape = self.workcell.piece.map_or(shape, |p| p.shape);
                // The count already includes this piece; go back up from its level.
                let levels = &self.waypoints.slots[piece_shape.index()];
                let level = (self.workcell.pallet_count(piece_shape) as usize)
                    .saturating_sub(1)
                    .min(levels.len() - 1);
                self.program_move(levels[level].0);
                self.program_move(JointConfig::HOME);
            }
            CyclePhase::Idle | CyclePhase::Recognize => {}
        }
        self.apply_script_outputs();
        let mut text = format!("phase={next} cycle={}", self.rapid.cycle_count + 1);
        if let Some(p) = self.workcell.piece {
            text.push_str(&format!(" shape={}", p.shape));
        }
        self.log(LogLevel::Info, text);
    }

    /// Values the program would put on its outputs in the current state.
    fn script_output(&self, name: &str) -> u8 {
        let piece = self.workcell.piece;
        let on = match name {
            DO_CONVEYOR => self.rapid.cycle_phase == CyclePhase::Convey,
            DO_GRIP => piece.is_some_and(|p| p.location == PieceLocation::Gripped),
            other => match Shape::from_signal(other) {
                Some(s) => piece.is_some_and(|p| p.is_active() && p.recognized && p.shape == s),
                None => false,
            },
        };
        u8::from(on)
    }

    fn apply_script_outputs(&mut self) {
        for name in SCRIPT_OUTPUTS {
            if !self.workcell.overrides.contains(name) {
                let v = self.script_output(name);
                self.workcell.set(name, v);
            }
        }
        let at_b = self
            .workcell
            .piece
            .is_some_and(|p| p.location == PieceLocation::B);
        self.workcell.set(DI_IR, u8::from(at_b));
    }

    pub fn handle_execution_action(&mut self, action: ExecutionAction) -> Result<(), ControlError> {
        match action {
            ExecutionAction::Resetpp => {
                self.rapid.pointer_at_main = true;
                self.rapid.running = false;
                self.paused = false;
                self.motion.clear();
                self.workcell.piece = None;
                self.rapid.cycle_phase = CyclePhase::Idle;
                self.phase_elapsed_s = 0.0;
                self.workcell.camera_busy = false;
                self.workcell.overrides.clear();
                self.apply_script_outputs();
                self.log(LogLevel::Info, "execution=resetpp phase=IDLE".into());
            }
            ExecutionAction::Start => {
                if self.rapid.running {
                    self.log(LogLevel::Warn, "execution=start rejected: running".into());
                    return Err(ControlError::Conflict("program is already running".into()));
                }
                if !(self.rapid.pointer_at_main || self.paused) {
                    return Err(ControlError::Conflict("program pointer not set".into()));
                }
                self.rapid.running = true;
                self.rapid.pointer_at_main = false;
                self.paused = false;
                self.log(LogLevel::Info, "execution=start".into());
                if self.rapid.cycle_phase == CyclePhase::Idle {
                    self.transition(CyclePhase::Spawn);
                }
            }
            ExecutionAction::Stop => {
                if self.rapid.running {
                    self.rapid.running = false;
                    self.paused = true;
                }
                self.log(LogLevel::Info, "execution=stop".into());
            }
        }
        Ok(())
    }

    /// Joint-target symbol write followed by MoveAbsJ at full speed.
    pub fn handle_symbol_update(&mut self, joints_deg: [f64; JOINTS]) -> Result<(), ControlError> {
        if let Some(i) = joints_deg.iter().position(|v| !v.is_finite()) {
            return Err(ControlError::InvalidValue(format!("joint {} is not finite", i + 1)));
        }
        let target = JointConfig::from_degrees(joints_deg);
        if let Some(i) = self.dh.limit_violation(&target) {
            let lim = self.dh.limits()[i];
            return Err(ControlError::JointLimit {
                joint: i + 1,
                value_deg: joints_deg[i],
                min_deg: lim.min.to_degrees(),
                max_deg: lim.max.to_degrees(),
            });
        }
        if self.rapid.cycle_phase != CyclePhase::Idle {
            return Err(ControlError::Busy(format!(
                "stacking program owns the arm (phase {})",
                self.rapid.cycle_phase
            )));
        }
        self.motion.enqueue(MoveAbsJ { target, speed: 1.0 });
        self.log(
            LogLevel::Info,
            format!("jtarget={:?}", joints_deg.map(|v| (v * 1000.0).round() / 1000.0)),
        );
        Ok(())
    }

    pub fn handle_io_set(&mut self, name: &str, value: u8) -> Result<(), ControlError> {
        if value > 1 {
            return Err(ControlError::InvalidValue(format!("{name} value must be 0 or 1")));
        }
        let sig = self
            .workcell
            .signal(name)
            .ok_or_else(|| ControlError::NotFound(name.to_string()))?;
        if sig.kind == SignalKind::DI {
            return Err(ControlError::Forbidden(name.to_string()));
        }
        if SCRIPT_OUTPUTS.contains(&name) {
            self.workcell.overrides.insert(name.to_string());
        }
        self.workcell.set(name, value);
        self.log(LogLevel::Info, format!("io {name}={value}"));
        Ok(())
    }

    /// Checks the cell's IO/phase coupling. Outputs under manual override
    /// are exempt until the next phase transition.
    pub fn check_invariants(&self) -> Result<(), String> {
        let rapid = &self.rapid;
        let wc = &self.workcell;
        if rapid.running && rapid.cycle_phase == CyclePhase::Idle {
            return Err("running while phase is IDLE".into());
        }
        let shape_signals = [DO_SQUARE, DO_RECTANGLE, DO_CIRCLE];
        if !shape_signals.iter().any(|s| wc.is_overridden(s)) {
            let lit: Vec<&str> = shape_signals.into_iter().filter(|s| wc.is_high(s)).collect();
            if lit.len() > 1 {
                return Err(format!("shape outputs not exclusive: {lit:?}"));
            }
            let expected = wc
                .piece
                .filter(|p| p.is_active() && p.recognized)
                .map(|p| p.shape.signal());
            if lit.first().copied() != expected {
                return Err(format!("shape outputs {lit:?} but expected {expected:?}"));
            }
        }
        let at_b = wc.piece.is_some_and(|p| p.location == PieceLocation::B);
        if wc.is_high(DI_IR) != at_b {
            return Err(format!("DI_IR={} with piece at B={at_b}", wc.is_high(DI_IR)));
        }
        if !wc.is_overridden(DO_CONVEYOR)
            && wc.is_high(DO_CONVEYOR) != (rapid.cycle_phase == CyclePhase::Convey)
        {
            return Err(format!(
                "DO_CONVEYOR={} in phase {}",
                wc.is_high(DO_CONVEYOR),
                rapid.cycle_phase
            ));
        }
        let gripped = wc
            .piece
            .is_some_and(|p| p.location == PieceLocation::Gripped);
        if !wc.is_overridden(DO_GRIP) && wc.is_high(DO_GRIP) != gripped {
            return Err(format!("DO_GRIP={} with piece gripped={gripped}", wc.is_high(DO_GRIP)));
        }
        if wc.camera_busy != (rapid.cycle_phase == CyclePhase::Recognize) {
            return Err("camera busy outside RECOGNIZE".into());
        }
        if let Some(i) = self.dh.limit_violation(&self.motion.current()) {
            return Err(format!("joint {} outside limits", i + 1));
        }
        Ok(())
    }

    /// Position of the piece on the belt, for rendering and tests.
    pub fn piece_position(&self) -> Option<Vector3<f64>> {
        let p = self.workcell.piece?;
        let b = Vector3::from(self.cell.location_b);
        let a = b + Vector3::new(0.0, -250.0, 0.0);
        Some(match p.location {
            PieceLocation::A => a,
            PieceLocation::Conveyor => a + (b - a) * p.conveyor_progress,
            PieceLocation::B => b,
            PieceLocation::Gripped | PieceLocation::PalletSlot => self.pose.position,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim() -> Simulation {
        Simulation::new(
            DhTable::irb120(),
            &EmulatorSettings::default(),
            &WorkcellSettings::default(),
            1_000_000,
        )
        .unwrap()
    }

    fn run_until(s: &mut Simulation, max_ticks: usize, mut pred: impl FnMut(&Simulation) -> bool) -> bool {
        for _ in 0..max_ticks {
            s.tick();
            s.check_invariants().unwrap();
            if pred(s) {
                return true;
            }
        }
        false
    }

    #[test]
    fn default_waypoints_are_reachable() {
        let s = sim();
        assert!(s.dh.within_limits(&s.waypoints.at_b));
    }

    #[test]
    fn start_leaves_idle_immediately() {
        let mut s = sim();
        s.handle_execution_action(ExecutionAction::Resetpp).unwrap();
        s.handle_execution_action(ExecutionAction::Start).unwrap();
        assert_eq!(s.rapid().cycle_phase, CyclePhase::Spawn);
        s.tick();
        assert_ne!(s.rapid().cycle_phase, CyclePhase::Idle);
    }

    #[test]
    fn double_start_conflicts() {
        let mut s = sim();
        s.handle_execution_action(ExecutionAction::Start).unwrap();
        assert!(matches!(
            s.handle_execution_action(ExecutionAction::Start),
            Err(ControlError::Conflict(_))
        ));
    }

    #[test]
    fn full_cycle_stacks_one_piece() {
        let mut s = sim();
        s.handle_execution_action(ExecutionAction::Start).unwrap();
        let shape = s.workcell().piece.unwrap().shape;
        assert!(run_until(&mut s, 250 * 60, |s| s.rapid().cycle_count == 1));
        assert_eq!(s.rapid().cycle_phase, CyclePhase::Spawn);
        assert_eq!(s.workcell().pallet_count(shape), 1);
        let log = s.spylog_read(0);
        let phases: Vec<&str> = log
            .events
            .iter()
            .filter_map(|e| e.text.strip_prefix("phase="))
            .map(|t| t.split(' ').next().unwrap())
            .collect();
        assert_eq!(
            phases,
            ["SPAWN", "RECOGNIZE", "CONVEY", "AT_B", "PICK", "PLACE", "RETURN", "SPAWN"]
        );
        assert!(s.spylog_read(log.next_since).events.is_empty());
    }

    #[test]
    fn shapes_cycle_in_order() {
        let mut s = sim();
        s.handle_execution_action(ExecutionAction::Start).unwrap();
        let mut seen = vec![s.workcell().piece.unwrap().shape];
        assert!(run_until(&mut s, 250 * 120, |s| {
            if let Some(p) = s.workcell().piece {
                if seen.last() != Some(&p.shape) {
                    seen.push(p.shape);
                }
            }
            s.rapid().cycle_count == 3
        }));
        assert_eq!(seen[..3], Shape::ALL);
        assert_eq!(s.workcell().pallet, [1, 1, 1]);
    }

    #[test]
    fn stop_mid_convey_freezes_piece() {
        let mut s = sim();
        s.handle_execution_action(ExecutionAction::Start).unwrap();
        assert!(run_until(&mut s, 2000, |s| s.rapid().cycle_phase == CyclePhase::Convey));
        for _ in 0..50 {
            s.tick();
        }
        s.handle_execution_action(ExecutionAction::Stop).unwrap();
        let progress = s.workcell().piece.unwrap().conveyor_progress;
        for _ in 0..100 {
            s.tick();
            s.check_invariants().unwrap();
        }
        assert!(s.workcell().is_high(DO_CONVEYOR));
        assert_eq!(s.workcell().piece.unwrap().conveyor_progress, progress);
        s.handle_execution_action(ExecutionAction::Start).unwrap();
        s.tick();
        assert!(s.workcell().piece.unwrap().conveyor_progress > progress);
    }

    #[test]
    fn manual_conveyor_override_halts_belt() {
        let mut s = sim();
        s.handle_execution_action(ExecutionAction::Start).unwrap();
        assert!(run_until(&mut s, 2000, |s| s.rapid().cycle_phase == CyclePhase::Convey));
        s.tick();
        s.handle_io_set(DO_CONVEYOR, 0).unwrap();
        let progress = s.workcell().piece.unwrap().conveyor_progress;
        for _ in 0..1000 {
            s.tick();
            s.check_invariants().unwrap();
        }
        assert_eq!(s.rapid().cycle_phase, CyclePhase::Convey);
        assert_eq!(s.workcell().piece.unwrap().conveyor_progress, progress);
        s.handle_io_set(DO_CONVEYOR, 1).unwrap();
        assert!(run_until(&mut s, 1000, |s| s.rapid().cycle_phase == CyclePhase::AtB));
        assert!(!s.workcell().is_overridden(DO_CONVEYOR));
        assert!(!s.workcell().is_high(DO_CONVEYOR));
    }

    #[test]
    fn io_set_rules() {
        let mut s = sim();
        s.handle_io_set("DO_7", 1).unwrap();
        assert!(s.workcell().is_high("DO_7"));
        assert_eq!(
            s.handle_io_set(DI_IR, 1),
            Err(ControlError::Forbidden(DI_IR.into()))
        );
        assert_eq!(
            s.handle_io_set("DO_99", 1),
            Err(ControlError::NotFound("DO_99".into()))
        );
    }

    #[test]
    fn symbol_update_rules() {
        let mut s = sim();
        let err = s.handle_symbol_update([200.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, ControlError::JointLimit { joint: 1, .. }), "{err}");

        s.handle_symbol_update([0.0; 6]).unwrap();
        s.tick();
        assert!(s.motion().is_idle());
        assert_eq!(s.current_q(), JointConfig::HOME);

        s.handle_symbol_update([10.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut ticks = 0;
        while !s.motion().is_idle() {
            s.tick();
            ticks += 1;
        }
        assert!(ticks as f64 * s.tick_s() <= 10.0 / 250.0 + s.tick_s() + 1e-12);
        assert_eq!(s.current_q(), JointConfig::from_degrees([10.0, 0.0, 0.0, 0.0, 0.0, 0.0]));

        s.handle_execution_action(ExecutionAction::Start).unwrap();
        assert!(matches!(
            s.handle_symbol_update([0.0; 6]),
            Err(ControlError::Busy(_))
        ));
    }

    #[test]
    fn reset_clears_cycle() {
        let mut s = sim();
        s.handle_execution_action(ExecutionAction::Start).unwrap();
        assert!(run_until(&mut s, 3000, |s| s.rapid().cycle_phase == CyclePhase::AtB));
        s.handle_execution_action(ExecutionAction::Resetpp).unwrap();
        let r = s.rapid();
        assert!(r.pointer_at_main && !r.running);
        assert_eq!(r.cycle_phase, CyclePhase::Idle);
        s.check_invariants().unwrap();
    }

    #[test]
    fn trajectory_matches_fk() {
        let mut s = sim();
        s.handle_symbol_update([20.0, 10.0, -5.0, 30.0, 40.0, 50.0]).unwrap();
        for _ in 0..100 {
            s.tick();
        }
        for sample in s.trajectory().lock().iter() {
            let fk = forward_kinematics(s.dh(), &sample.q).unwrap();
            assert!(fk.position_error(&sample.pose) <= 1e-9);
        }
    }
}
