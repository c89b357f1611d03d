//! Damped least-squares (Levenberg-Marquardt) inverse kinematics.
//!
//! Each iteration solves
//!
//! ```text
//! H_k  = J_k^T W_E J_k + W_N
//! g_k  = J_k^T W_E e_k
//! q_k+1 = q_k + alpha * H_k^-1 g_k
//! ```
//!
//! with error-proportional damping `W_N = (1/2 e_k^T W_E e_k + bias) I`, which
//! keeps `H_k` positive definite at every configuration, singular or not.
//! The step is the minimiser of the damped model
//! `1/2 r^T W_E r + 1/2 dq^T W_N dq` with `r = e_k - J_k dq`; its value at the
//! accepted step is recorded in the trace.

use serde::{Deserialize, Serialize};

use super::{
    forward_kinematics, jacobian, task_residual, DhTable, JointConfig, KinematicsError, Matrix6,
    Pose, Vector6,
};

/// Ratio `sigma_min / sigma_max` below which the undamped step refuses to solve.
pub const NEWTON_SINGULAR_RATIO: f64 = 1e-12;

/// Tunables shared by every solve; loaded from the `[solver]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Diagonal of the task weight matrix: x, y, z (per mm), rx, ry, rz (per rad).
    pub weights_task: [f64; 6],
    pub damping_bias: f64,
    pub learning_rate: f64,
    /// mm
    pub tol_pos: f64,
    /// rad
    pub tol_orient: f64,
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            weights_task: [1.0, 1.0, 1.0, 100.0, 100.0, 100.0],
            damping_bias: 1e-3,
            learning_rate: 1.0,
            tol_pos: 0.01,
            tol_orient: 1e-3,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkProblem {
    pub target: Pose,
    pub seed: JointConfig,
    pub weights_task: Vector6,
    pub damping_bias: f64,
    pub learning_rate: f64,
    pub tol_pos: f64,
    pub tol_orient: f64,
    pub max_iters: usize,
}

impl IkProblem {
    pub fn new(target: Pose, seed: JointConfig, settings: &SolverSettings) -> Self {
        Self {
            target,
            seed,
            weights_task: Vector6::from_column_slice(&settings.weights_task),
            damping_bias: settings.damping_bias,
            learning_rate: settings.learning_rate,
            tol_pos: settings.tol_pos,
            tol_orient: settings.tol_orient,
            max_iters: settings.max_iters,
        }
    }

    pub fn with_defaults(target: Pose, seed: JointConfig) -> Self {
        Self::new(target, seed, &SolverSettings::default())
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let bad = |m: &str| Err(KinematicsError::InvalidArgument(m.to_string()));
        self.seed.ensure_finite()?;
        if !self.target.position.iter().all(|v| v.is_finite()) {
            return bad("target position is not finite");
        }
        // Zero weights are allowed on the orientation rows (position-only mode).
        if self.weights_task.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.weights_task.rows(0, 3).iter().any(|w| *w <= 0.0)
        {
            return bad("task weights must be positive");
        }
        if !(self.damping_bias.is_finite() && self.damping_bias > 0.0) {
            return bad("damping bias must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning rate must lie in (0, 1]");
        }
        if !(self.tol_pos > 0.0 && self.tol_orient > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        Ok(())
    }

    fn checks_orientation(&self) -> bool {
        self.weights_task.rows(3, 3).iter().any(|w| *w > 0.0)
    }

    fn error_energy(&self, e: &Vector6) -> f64 {
        0.5 * e.dot(&self.weights_task.component_mul(e))
    }
}

/// Per-joint damping `w_N,i` for residual `e`.
pub fn lm_damping(e: &Vector6, weights_task: &Vector6, bias: f64) -> f64 {
    0.5 * e.dot(&weights_task.component_mul(e)) + bias
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Damping applied to every joint.
    pub damping: f64,
    /// Damped model value at the accepted (clamped) step.
    pub damped_objective: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkTraceEntry {
    pub q: JointConfig,
    /// `sqrt(e^T W_E e)` at `q`.
    pub residual_norm: f64,
    /// `1/2 e^T W_E e` at `q`, i.e. the damped model at a zero step.
    pub error_energy: f64,
    /// Absent for the iterate the solver stopped on.
    pub step: Option<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkResult {
    pub solution: JointConfig,
    pub converged: bool,
    pub iterations: usize,
    pub pos_err_mm: f64,
    pub orient_err_rad: f64,
    pub trace: Vec<IkTraceEntry>,
}

impl IkResult {
    /// Running minimum of the residual norm over the trace.
    pub fn best_residual_history(&self) -> Vec<f64> {
        self.trace
            .iter()
            .scan(f64::INFINITY, |best, t| {
                *best = best.min(t.residual_norm);
                Some(*best)
            })
            .collect()
    }
}

struct LmStep {
    residual: Vector6,
    jacobian: Matrix6,
    damping: f64,
    increment: Vector6,
}

fn lm_increment(
    dh: &DhTable,
    q: &JointConfig,
    problem: &IkProblem,
    iteration: usize,
) -> Result<LmStep, KinematicsError> {
    let pose = forward_kinematics(dh, q)?;
    let e = task_residual(&problem.target, &pose);
    let j = jacobian(dh, q)?;
    let we = Matrix6::from_diagonal(&problem.weights_task);
    let damping = lm_damping(&e, &problem.weights_task, problem.damping_bias);
    let h = j.transpose() * we * j + Matrix6::identity() * damping;
    let g = j.transpose() * we * e;
    let failure = || KinematicsError::NumericFailure { iteration, q: *q };
    let chol = h.cholesky().ok_or_else(failure)?;
    let increment = chol.solve(&g) * problem.learning_rate;
    if !increment.iter().all(|v| v.is_finite()) {
        return Err(failure());
    }
    Ok(LmStep {
        residual: e,
        jacobian: j,
        damping,
        increment,
    })
}

/// One unclamped damped step from `q`.
pub fn ik_step_lm(
    dh: &DhTable,
    q: &JointConfig,
    problem: &IkProblem,
) -> Result<JointConfig, KinematicsError> {
    problem.validate()?;
    q.ensure_finite()?;
    let step = lm_increment(dh, q, problem, 0)?;
    Ok(JointConfig::from_vector(&(q.as_vector() + step.increment)))
}

/// One undamped Newton step `q + alpha J^-1 e`. Fails near singular configurations.
pub fn ik_step_newton(
    dh: &DhTable,
    q: &JointConfig,
    problem: &IkProblem,
) -> Result<JointConfig, KinematicsError> {
    problem.validate()?;
    let pose = forward_kinematics(dh, q)?;
    let e = task_residual(&problem.target, &pose);
    let j = jacobian(dh, q)?;
    let svd = j.svd(true, true);
    let (smin, smax) = (svd.singular_values.min(), svd.singular_values.max());
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if ratio <= NEWTON_SINGULAR_RATIO {
        return Err(KinematicsError::SingularJacobian { ratio });
    }
    let dq = svd
        .solve(&e, 0.0)
        .map_err(|_| KinematicsError::SingularJacobian { ratio })?;
    let next = q.as_vector() + dq * problem.learning_rate;
    if !next.iter().all(|v| v.is_finite()) {
        return Err(KinematicsError::NumericFailure { iteration: 0, q: *q });
    }
    Ok(JointConfig::from_vector(&next))
}

/// Largest `t` in `[0, 1]` keeping `q + t dq` inside the joint limits.
fn feasible_fraction(dh: &DhTable, q: &JointConfig, dq: &Vector6) -> f64 {
    let mut t: f64 = 1.0;
    for ((qi, di), l) in q.0.iter().zip(dq.iter()).zip(dh.limits()) {
        if *di > 0.0 && qi + di > l.max {
            t = t.min((l.max - qi) / di);
        } else if *di < 0.0 && qi + di < l.min {
            t = t.min((l.min - qi) / di);
        }
    }
    t.max(0.0)
}

/// Iterates damped steps from the seed until both tolerances hold or the
/// iteration budget runs out. Iterates are clamped to the joint limits; when
/// clamping would raise the damped objective the step is instead shortened
/// until it fits.
/// An unreachable target is not an error: the best iterate comes back with
/// `converged == false`.
pub fn solve_ik(dh: &DhTable, problem: &IkProblem) -> Result<IkResult, KinematicsError> {
    problem.validate()?;
    let check_orient = problem.checks_orientation();
    let mut q = dh.clamp(&problem.seed);
    let mut trace = Vec::new();
    let mut best: Option<(JointConfig, f64, f64, f64)> = None;

    for k in 0..=problem.max_iters {
        let pose = forward_kinematics(dh, &q)?;
        let e = task_residual(&problem.target, &pose);
        let pos_err = e.fixed_rows::<3>(0).norm();
        let orient_err = e.fixed_rows::<3>(3).norm();
        let energy = problem.error_energy(&e);
        if !energy.is_finite() {
            return Err(KinematicsError::NumericFailure { iteration: k, q });
        }
        if best.is_none_or(|b| energy < b.3) {
            best = Some((q, pos_err, orient_err, energy));
        }
        let mut entry = IkTraceEntry {
            q,
            residual_norm: (2.0 * energy).sqrt(),
            error_energy: energy,
            step: None,
        };
        let converged =
            pos_err <= problem.tol_pos && (!check_orient || orient_err <= problem.tol_orient);
        if converged {
            trace.push(entry);
            return Ok(IkResult {
                solution: q,
                converged: true,
                iterations: k,
                pos_err_mm: pos_err,
                orient_err_rad: orient_err,
                trace,
            });
        }
        if k == problem.max_iters {
            trace.push(entry);
            break;
        }

        let step = lm_increment(dh, &q, problem, k)?;
        let model = |dq: &Vector6| {
            let r = step.residual - step.jacobian * dq;
            problem.error_energy(&r) + 0.5 * step.damping * dq.norm_squared()
        };
        let mut next = dh.clamp(&JointConfig::from_vector(&(q.as_vector() + step.increment)));
        let mut accepted = next.as_vector() - q.as_vector();
        let mut damped_objective = model(&accepted);
        if damped_objective > energy {
            let t = feasible_fraction(dh, &q, &step.increment);
            next = dh.clamp(&JointConfig::from_vector(&(q.as_vector() + step.increment * t)));
            accepted = next.as_vector() - q.as_vector();
            damped_objective = model(&accepted);
        }
        entry.step = Some(StepRecord {
            damping: step.damping,
            damped_objective,
            step_norm: accepted.norm(),
        });
        trace.push(entry);
        q = next;
    }

    let (solution, pos_err, orient_err, _) = best.expect("at least one iterate evaluated");
    Ok(IkResult {
        solution,
        converged: false,
        iterations: problem.max_iters,
        pos_err_mm: pos_err,
        orient_err_rad: orient_err,
        trace,
    })
}
