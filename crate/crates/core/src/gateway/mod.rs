//! Control functions on top of a running twin, plus the solver socket.

mod motion;
pub mod solver;

pub use motion::{
    nominal_duration, GatewayError, IkSummary, JogCommand, JogMode, LinearCommand, MotionGateway,
    Ticket, TicketStatus, DEFAULT_MAX_LINEAR_STEP_MM, MAX_JOINT_AGE_MS, SETTLE_TOL_DEG,
};
pub use solver::{handle_line, SolverClient, SolverReply, SolverRequest, SolverService, WirePose};
