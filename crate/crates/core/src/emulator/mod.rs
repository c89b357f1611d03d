//! Emulated robot controller: the stacking cell model and its REST service.

pub mod camera;
mod motion;
pub mod server;
mod settings;
mod sim;

pub use motion::{MotionExecutor, MoveAbsJ};
pub use server::{EmulatorHandle, EmulatorServer, Resource, SimCommand};
pub use settings::{EmulatorSettings, ServiceTimes, WorkcellSettings};
pub use sim::{
    ControlError, CyclePhase, EmulatorError, Piece, PieceLocation, RapidExecutionState, Shape,
    SimSnapshot, Simulation, SpyLog, TrajectorySample, WorkcellState, DI_IR, DO_CIRCLE,
    DO_CONVEYOR, DO_GRIP, DO_RECTANGLE, DO_SQUARE,
};
