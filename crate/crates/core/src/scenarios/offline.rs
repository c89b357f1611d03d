use std::collections::BTreeSet;
use std::time::Duration;

use nalgebra::Vector3;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CriterionReport, ScenarioError, ScenarioResult, TITLES};
use crate::config::Config;
use crate::emulator::{CyclePhase, EmulatorServer, Simulation};
use crate::kinematics::{
    forward_kinematics, ik_step_lm, ik_step_newton, jacobian, solve_ik, DhTable, IkProblem,
    JointConfig, SolverSettings, JOINTS,
};
use crate::wire::paths::{self, ExecutionAction};
use crate::wire::{
    digest_client_sign, Challenge, IoSetMsg, IoSignal, IoSnapshotMsg, JogTargetMsg,
    JointTargetMsg, LogLevel, RobTargetMsg, SignalKind, SpyEvent, SpyLogMsg, WireMessage,
    WireOrient, WirePosition, MANDATORY_SIGNALS,
};

// ---------------------------------------------------------------------------
// kinematics

type Mat4 = [[f64; 4]; 4];

fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// TCP position from plain 4x4 homogeneous DH matrices, sharing no code
/// with [`crate::kinematics`].
pub fn oracle_forward_position(dh: &DhTable, q: &[f64; JOINTS]) -> [f64; 3] {
    let mut t: Mat4 = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    for (row, qi) in dh.rows().iter().zip(q) {
        let (st, ct) = (qi + row.theta_offset).sin_cos();
        let (sa, ca) = row.alpha.sin_cos();
        let link = [
            [ct, -st * ca, st * sa, row.a * ct],
            [st, ct * ca, -ct * sa, row.a * st],
            [0.0, sa, ca, row.d],
            [0.0, 0.0, 0.0, 1.0],
        ];
        t = mat_mul(&t, &link);
    }
    [t[0][3], t[1][3], t[2][3]]
}

fn random_config(dh: &DhTable, rng: &mut impl Rng) -> JointConfig {
    let mut q = [0.0; JOINTS];
    for (v, l) in q.iter_mut().zip(dh.limits()) {
        *v = rng.random_range(l.min..=l.max);
    }
    JointConfig(q)
}

/// Largest column-wise relative error of the analytic Jacobian against
/// central differences of the forward kinematics.
fn jacobian_fd_error(dh: &DhTable, q: &JointConfig, h: f64) -> ScenarioResult<f64> {
    let j = jacobian(dh, q)?;
    let mut worst: f64 = 0.0;
    for i in 0..JOINTS {
        let (mut plus, mut minus) = (*q, *q);
        plus.0[i] += h;
        minus.0[i] -= h;
        let (pp, pm) = (forward_kinematics(dh, &plus)?, forward_kinematics(dh, &minus)?);
        let lin = (pp.position - pm.position) / (2.0 * h);
        let ang = (pp.orientation * pm.orientation.inverse()).scaled_axis() / (2.0 * h);
        let col = j.column(i);
        let diff = (Vector3::new(col[0], col[1], col[2]) - lin).norm_squared()
            + (Vector3::new(col[3], col[4], col[5]) - ang).norm_squared();
        worst = worst.max(diff.sqrt() / col.norm().max(1e-12));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct KinematicsReport {
    pub jacobian_configs: usize,
    pub jacobian_max_rel_err: f64,
    pub home_position: [f64; 3],
    pub home_oracle_err_mm: f64,
    pub ik_targets: usize,
    pub ik_converged: usize,
    /// Accepted steps whose damped objective exceeded its zero-step value.
    pub descent_violations: usize,
    pub descent_steps_checked: usize,
    /// `None` when the undamped step refused to solve.
    pub newton_step_norm: Option<f64>,
    pub newton_error: Option<String>,
    pub lm_step_norm: f64,
}

impl KinematicsReport {
    pub fn convergence_rate(&self) -> f64 {
        self.ik_converged as f64 / self.ik_targets.max(1) as f64
    }
}

pub fn kinematics_suite(
    dh: &DhTable,
    settings: &SolverSettings,
    seed: u64,
) -> ScenarioResult<KinematicsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut jacobian_max_rel_err: f64 = 0.0;
    for _ in 0..100 {
        let q = random_config(dh, &mut rng);
        jacobian_max_rel_err = jacobian_max_rel_err.max(jacobian_fd_error(dh, &q, 1e-6)?);
    }

    let home = forward_kinematics(dh, &JointConfig::HOME)?;
    let oracle = Vector3::from(oracle_forward_position(dh, &[0.0; JOINTS]));
    let home_oracle_err_mm = (home.position - oracle).norm();

    let (mut ik_converged, mut descent_violations, mut descent_steps_checked) = (0, 0, 0);
    let ik_targets = 1000;
    for _ in 0..ik_targets {
        let q_star = random_config(dh, &mut rng);
        let mut seed_q = q_star;
        for v in seed_q.0.iter_mut() {
            *v += rng.random_range(-0.2..=0.2);
        }
        let target = forward_kinematics(dh, &q_star)?;
        let r = solve_ik(dh, &IkProblem::new(target, dh.clamp(&seed_q), settings))?;
        if !r.converged {
            continue;
        }
        ik_converged += 1;
        for entry in &r.trace {
            if let Some(step) = entry.step {
                descent_steps_checked += 1;
                let slack = 1e-12 * entry.error_energy.max(1.0);
                if step.damped_objective > entry.error_energy + slack {
                    descent_violations += 1;
                }
            }
        }
    }

    let q_sing = JointConfig::new([0.3, 0.2, 0.1, 0.4, 1e-6, 0.2]);
    let mut q_goal = q_sing;
    q_goal.0[3] += 0.2;
    q_goal.0[4] = 0.3;
    q_goal.0[5] -= 0.1;
    let problem = IkProblem::new(forward_kinematics(dh, &q_goal)?, q_sing, settings);
    let (newton_step_norm, newton_error) = match ik_step_newton(dh, &q_sing, &problem) {
        Ok(next) => (Some((next.as_vector() - q_sing.as_vector()).norm()), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let lm = ik_step_lm(dh, &q_sing, &problem)?;
    let lm_step_norm = (lm.as_vector() - q_sing.as_vector()).norm();

    Ok(KinematicsReport {
        jacobian_configs: 100,
        jacobian_max_rel_err,
        home_position: [home.position.x, home.position.y, home.position.z],
        home_oracle_err_mm,
        ik_targets,
        ik_converged,
        descent_violations,
        descent_steps_checked,
        newton_step_norm,
        newton_error,
        lm_step_norm,
    })
}

pub fn judge_kinematics(r: &KinematicsReport) -> CriterionReport {
    let newton_breaks = r.newton_error.is_some() || r.newton_step_norm.is_some_and(|n| n > 10.0);
    let lm_bounded = r.lm_step_norm.is_finite() && r.lm_step_norm <= 10.0;
    let passed = r.jacobian_max_rel_err <= 1e-5
        && r.home_oracle_err_mm <= 1e-9
        && r.convergence_rate() >= 0.99
        && r.descent_violations == 0
        && newton_breaks
        && lm_bounded;
    let newton = match (&r.newton_error, r.newton_step_norm) {
        (Some(e), _) => format!("newton fails ({e})"),
        (None, Some(n)) => format!("newton step {n:.3e} rad"),
        _ => "newton n/a".into(),
    };
    let summary = format!(
        "jacobian rel err {:.1e}, home oracle err {:.1e} mm, ik {}/{} converged, {} descent violations in {} steps, {newton}, lm step {:.3} rad",
        r.jacobian_max_rel_err,
        r.home_oracle_err_mm,
        r.ik_converged,
        r.ik_targets,
        r.descent_violations,
        r.descent_steps_checked,
        r.lm_step_norm
    );
    CriterionReport::new(5, TITLES[4], passed, summary, r)
}

// ---------------------------------------------------------------------------
// protocol

const AWKWARD_CHARS: &[char] = &[
    'a', 'Z', '0', ' ', '"', '\\', '/', '\n', '\t', '\u{1}', 'é', 'ß', '→', '🤖', '{', '}', '=',
];

fn random_text(rng: &mut impl Rng, max_len: usize) -> String {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| *AWKWARD_CHARS.choose(rng).expect("non-empty")).collect()
}

fn random_f64(rng: &mut impl Rng) -> f64 {
    let mantissa: f64 = rng.random_range(-1.0..1.0);
    let exp: i32 = rng.random_range(-12..=6);
    mantissa * 10f64.powi(exp)
}

fn random_quaternion(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 {
            return v.map(|x| x / n);
        }
    }
}

fn roundtrip<M: WireMessage + PartialEq + std::fmt::Debug>(msg: &M) -> Result<(), String> {
    let bytes = msg.encode();
    match M::decode(&bytes) {
        Ok(back) if &back == msg => Ok(()),
        Ok(back) => Err(format!("{msg:?} came back as {back:?}")),
        Err(e) => Err(format!("{msg:?} failed to decode: {e}")),
    }
}

/// Encodes and decodes `cases` random payloads of every wire message type.
/// Returns the failure count and the first failure.
pub fn random_wire_roundtrip(cases: usize, seed: u64) -> (usize, Option<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut first = None;
    for i in 0..cases {
        let seq = rng.random::<u64>();
        let ts = rng.random::<u64>();
        let outcome = match i % 6 {
            0 => roundtrip(&JointTargetMsg {
                joints: std::array::from_fn(|_| random_f64(&mut rng)),
                seq,
                timestamp_ms: ts,
            }),
            1 => {
                let [q1, q2, q3, q4] = random_quaternion(&mut rng);
                roundtrip(&RobTargetMsg {
                    pos: WirePosition {
                        x: random_f64(&mut rng),
                        y: random_f64(&mut rng),
                        z: random_f64(&mut rng),
                    },
                    orient: WireOrient { q1, q2, q3, q4 },
                    seq,
                    timestamp_ms: ts,
                })
            }
            2 => {
                let mut names: BTreeSet<String> = MANDATORY_SIGNALS.iter().map(|s| s.to_string()).collect();
                for _ in 0..rng.random_range(0..20) {
                    names.insert(format!("DO_{}", rng.random_range(6..200)));
                }
                let mut signals: Vec<IoSignal> = names
                    .into_iter()
                    .map(|name| IoSignal {
                        kind: if name.starts_with("DI") { SignalKind::DI } else { SignalKind::DO },
                        name,
                        value: rng.random_range(0..=1),
                    })
                    .collect();
                let k = rng.random_range(0..signals.len());
                signals.rotate_left(k);
                roundtrip(&IoSnapshotMsg {
                    signals,
                    seq,
                    timestamp_ms: ts,
                })
            }
            3 => {
                let mut s = rng.random_range(0..1_000_000u64);
                let events: Vec<SpyEvent> = (0..rng.random_range(0..8))
                    .map(|_| {
                        s += rng.random_range(1..100);
                        SpyEvent {
                            seq: s,
                            timestamp_ms: rng.random(),
                            level: if rng.random_bool(0.8) { LogLevel::Info } else { LogLevel::Warn },
                            text: random_text(&mut rng, 40),
                        }
                    })
                    .collect();
                roundtrip(&SpyLogMsg {
                    next_since: s + rng.random_range(0..3),
                    events,
                })
            }
            4 => roundtrip(&JogTargetMsg {
                joints: std::array::from_fn(|_| random_f64(&mut rng)),
            }),
            _ => roundtrip(&IoSetMsg {
                value: rng.random_range(0..=1),
            }),
        };
        if let Err(e) = outcome {
            failures += 1;
            first.get_or_insert(e);
        }
    }
    (failures, first)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolReport {
    pub unauthenticated_status: u16,
    pub challenge_parsed: bool,
    pub signed_status: u16,
    pub replay_status: u16,
    pub expired_status: u16,
    pub expired_marked_stale: bool,
    pub roundtrip_cases: usize,
    pub roundtrip_failures: usize,
    pub first_failure: Option<String>,
}

/// Digest handshake against a live emulator plus the codec round trip.
pub async fn protocol_suite(cfg: &Config, cases: usize, seed: u64) -> ScenarioResult<ProtocolReport> {
    let mut cfg = cfg.clone();
    cfg.credentials.nonce_lifetime_s = 1;
    let emu = EmulatorServer::from_config(&cfg)?
        .spawn(([127, 0, 0, 1], 0).into())
        .await?;
    let http = reqwest::Client::builder().no_proxy().build()?;
    let url = format!("{}{}", emu.base_url(), paths::JOINTTARGET);
    let get = |auth: Option<String>| {
        let mut req = http.get(&url);
        if let Some(a) = auth {
            req = req.header("Authorization", a);
        }
        req.send()
    };
    let challenge_of = |r: &reqwest::Response| {
        r.headers()
            .get("www-authenticate")
            .and_then(|h| h.to_str().ok())
            .and_then(|h| Challenge::parse(h).ok())
    };

    let r = get(None).await?;
    let unauthenticated_status = r.status().as_u16();
    let challenge = challenge_of(&r);
    let challenge_parsed = challenge.is_some();
    let challenge = challenge.ok_or_else(|| ScenarioError("no digest challenge".into()))?;

    let sign = |nc: u32| {
        digest_client_sign("GET", paths::JOINTTARGET, &challenge, &cfg.credentials, "0a4f113b", nc)
    };
    let signed_status = get(Some(sign(1)?)).await?.status().as_u16();
    let replay_status = get(Some(sign(1)?)).await?.status().as_u16();
    tokio::time::sleep(Duration::from_millis(1300)).await;
    let r = get(Some(sign(2)?)).await?;
    let expired_status = r.status().as_u16();
    let expired_marked_stale = challenge_of(&r).is_some_and(|c| c.stale);
    emu.shutdown().await;

    let (roundtrip_failures, first_failure) = random_wire_roundtrip(cases, seed);
    Ok(ProtocolReport {
        unauthenticated_status,
        challenge_parsed,
        signed_status,
        replay_status,
        expired_status,
        expired_marked_stale,
        roundtrip_cases: cases,
        roundtrip_failures,
        first_failure,
    })
}

pub fn judge_protocol(r: &ProtocolReport) -> CriterionReport {
    let passed = r.unauthenticated_status == 401
        && r.challenge_parsed
        && r.signed_status == 200
        && r.replay_status == 401
        && r.expired_status == 401
        && r.expired_marked_stale
        && r.roundtrip_failures == 0;
    let summary = format!(
        "unauthenticated {}, signed {}, replayed {}, expired {} (stale={}), codec {}/{} failures",
        r.unauthenticated_status,
        r.signed_status,
        r.replay_status,
        r.expired_status,
        r.expired_marked_stale,
        r.roundtrip_failures,
        r.roundtrip_cases
    );
    CriterionReport::new(6, TITLES[5], passed, summary, r)
}

// ---------------------------------------------------------------------------
// model checking

#[derive(Debug, Clone, Default, Serialize)]
pub struct ModelCheckReport {
    pub sequences: usize,
    pub actions: u64,
    pub ticks: u64,
    pub rejected_actions: u64,
    pub cycles_completed: u64,
    pub phases_seen: Vec<CyclePhase>,
    /// Largest per-tick joint displacement as a fraction of its speed limit.
    pub max_speed_ratio: f64,
    pub violation_count: usize,
    pub violations: Vec<String>,
}

fn violate(report: &mut ModelCheckReport, msg: String) {
    report.violation_count += 1;
    if report.violations.len() < 10 {
        report.violations.push(msg);
    }
}

#[derive(Debug, Clone)]
enum Action {
    Ticks(u32),
    Pointer(ExecutionAction),
    IoSet(String, u8),
    Jog([f64; JOINTS]),
}

fn random_action(rng: &mut impl Rng, names: &[String]) -> Action {
    match rng.random_range(0..100) {
        0..50 => Action::Ticks(rng.random_range(1..=400)),
        50..72 => Action::Pointer(
            *[ExecutionAction::Resetpp, ExecutionAction::Start, ExecutionAction::Stop]
                .choose(rng)
                .expect("non-empty"),
        ),
        72..90 => {
            let name = if rng.random_bool(0.05) {
                "DO_NOPE".to_string()
            } else {
                names.choose(rng).expect("cell has signals").clone()
            };
            Action::IoSet(name, rng.random_range(0..=2))
        }
        _ => Action::Jog(std::array::from_fn(|_| rng.random_range(-180.0..180.0))),
    }
}

/// Drives fresh simulations with random interleavings of clock ticks,
/// program-pointer operations, IO writes and jogs, checking the cell
/// invariants after every action and the joint speed limits on every tick.
pub fn model_check(cfg: &Config, sequences: usize, seed: u64) -> ScenarioResult<ModelCheckReport> {
    let mut settings = cfg.emulator.clone();
    settings.spylog_capacity = 256;
    settings.trajectory_capacity = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ModelCheckReport {
        sequences,
        ..ModelCheckReport::default()
    };
    let mut phases = BTreeSet::new();

    let template = Simulation::new(cfg.robot.clone(), &settings, &cfg.workcell, 0)?;
    let names: Vec<String> = template.workcell().io().iter().map(|s| s.name.clone()).collect();
    let limits = *cfg.robot.speed_limits();
    let tick_s = template.tick_s();
    drop(template);

    for n in 0..sequences {
        let mut sim = Simulation::new(cfg.robot.clone(), &settings, &cfg.workcell, 0)?;
        let len = rng.random_range(1..=40);
        for _ in 0..len {
            let action = random_action(&mut rng, &names);
            report.actions += 1;
            let outcome = match &action {
                Action::Ticks(k) => {
                    for _ in 0..*k {
                        let before = sim.current_q();
                        sim.tick();
                        report.ticks += 1;
                        phases.insert(sim.rapid().cycle_phase);
                        let after = sim.current_q();
                        for (i, limit) in limits.iter().enumerate() {
                            let ratio = (after.0[i] - before.0[i]).abs() / (limit * tick_s);
                            report.max_speed_ratio = report.max_speed_ratio.max(ratio);
                            if ratio > 1.0 + 1e-9 {
                                violate(&mut report, format!("sequence {n}: joint {} moved {ratio:.4}x its limit", i + 1));
                            }
                        }
                        if let Err(e) = sim.check_invariants() {
                            violate(&mut report, format!("sequence {n} after tick: {e}"));
                        }
                    }
                    Ok(())
                }
                Action::Pointer(a) => sim.handle_execution_action(*a),
                Action::IoSet(name, v) => sim.handle_io_set(name, *v),
                Action::Jog(deg) => sim.handle_symbol_update(*deg),
            };
            if outcome.is_err() {
                report.rejected_actions += 1;
            }
            if let Err(e) = sim.check_invariants() {
                violate(&mut report, format!("sequence {n} after {action:?}: {e}"));
            }
        }
        report.cycles_completed += sim.rapid().cycle_count;
    }
    report.phases_seen = phases.into_iter().collect();
    Ok(report)
}

pub fn judge_model_check(r: &ModelCheckReport) -> CriterionReport {
    let passed = r.violation_count == 0 && r.max_speed_ratio <= 1.0 + 1e-9;
    let summary = format!(
        "{} sequences, {} actions ({} rejected), {} ticks, {} cycles, {}/{} phases reached, max speed ratio {:.4}, {} violations",
        r.sequences,
        r.actions,
        r.rejected_actions,
        r.ticks,
        r.cycles_completed,
        r.phases_seen.len(),
        CyclePhase::ALL.len(),
        r.max_speed_ratio,
        r.violation_count
    );
    CriterionReport::new(7, TITLES[6], passed, summary, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_home_position() {
        let p = oracle_forward_position(&DhTable::irb120(), &[0.0; JOINTS]);
        assert!((p[0] - 374.0).abs() < 1e-9 && p[1].abs() < 1e-9 && (p[2] - 630.0).abs() < 1e-9);
    }

    #[test]
    fn small_roundtrip_batch() {
        assert_eq!(random_wire_roundtrip(600, 3), (0, None));
    }

    #[test]
    fn short_model_check() {
        let r = model_check(&Config::default(), 20, 5).unwrap();
        assert_eq!(r.violation_count, 0, "{:?}", r.violations);
    }
}
