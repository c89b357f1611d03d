//! `rwstwin`: run and exercise the emulator, twin, solver and proxy.
//!
//! Joint values on the command line are degrees, lengths are millimetres and
//! quaternions are w-first. Exit status: 0 on success, 1 when the command
//! fails, 2 on a usage error.

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use rwstwin::config::Config;
use rwstwin::emulator::{CyclePhase, EmulatorServer};
use rwstwin::gateway::{
    JogCommand, JogMode, LinearCommand, MotionGateway, SolverService, Ticket, TicketStatus,
};
use rwstwin::kinematics::{solve_ik, IkProblem, JointConfig, Pose, JOINTS};
use rwstwin::proxy::{self, ProxyConfig};
use rwstwin::scenarios::{self as sc, CriterionReport};
use rwstwin::twin::state::parse_phase;
use rwstwin::twin::{StreamKind, TwinConfig, TwinHandle, CSV_HEADER};
use rwstwin::wire::paths::ExecutionAction;

#[derive(Parser, Debug)]
#[command(name = "rwstwin", version, about = "Robot workcell digital twin toolkit")]
struct Cli {
    /// TOML configuration file (robot, solver, credentials, emulator, workcell).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Emulated controller.
    Emulator {
        #[command(subcommand)]
        action: EmulatorCmd,
    },
    /// Twin client operations against a controller.
    Twin(TwinArgs),
    /// Inverse kinematics.
    Ik {
        #[command(subcommand)]
        action: IkCmd,
    },
    /// Browser-facing proxy.
    Proxy {
        #[command(subcommand)]
        action: ProxyCmd,
    },
    /// Measurement runs; each prints a pass/fail line.
    Bench {
        #[command(subcommand)]
        action: BenchCmd,
    },
}

#[derive(Subcommand, Debug)]
enum EmulatorCmd {
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        camera_delay_ms: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug)]
struct TwinArgs {
    #[arg(
        long,
        global = true,
        env = "TWIN_CONTROLLER_URL",
        default_value = "http://127.0.0.1:8080"
    )]
    controller_url: String,
    #[command(subcommand)]
    action: TwinCmd,
}

#[derive(Subcommand, Debug)]
enum TwinCmd {
    /// Polls the controller and prints a status line every second.
    Run {
        /// Seconds; runs until interrupted when absent.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Joint jog in degrees; waits until the arm settles.
    #[command(group(ArgGroup::new("mode").required(true).args(["absolute", "relative"])))]
    Jog {
        #[arg(long, value_parser = parse_joints, allow_hyphen_values = true)]
        absolute: Option<[f64; JOINTS]>,
        #[arg(long, value_parser = parse_joints, allow_hyphen_values = true)]
        relative: Option<[f64; JOINTS]>,
    },
    /// Cartesian TCP move by a delta in mm.
    Linear {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        dx: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        dy: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        dz: f64,
        /// Let the orientation float instead of holding it.
        #[arg(long)]
        free_orientation: bool,
    },
    /// Program pointer operation.
    Pointer { action: PointerAction },
    /// Writes a digital output.
    Do { name: String, value: u8 },
    /// Records joints and TCP to CSV.
    Record {
        /// Run this many stacking cycles while recording.
        #[arg(long, conflicts_with = "duration")]
        cycles: Option<u64>,
        /// Record for this many seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Polls for a while and prints the refresh windows.
    Metrics {
        #[arg(long, default_value_t = 3.0)]
        duration: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PointerAction {
    Resetpp,
    Start,
    Stop,
}

impl From<PointerAction> for ExecutionAction {
    fn from(p: PointerAction) -> Self {
        match p {
            PointerAction::Resetpp => ExecutionAction::Resetpp,
            PointerAction::Start => ExecutionAction::Start,
            PointerAction::Stop => ExecutionAction::Stop,
        }
    }
}

#[derive(Subcommand, Debug)]
enum IkCmd {
    /// Solves one target: `x,y,z,qw,qx,qy,qz`.
    Solve {
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        target: [f64; 7],
        #[arg(long, value_parser = parse_joints, allow_hyphen_values = true, default_value = "0,0,0,0,0,0")]
        seed: [f64; JOINTS],
    },
    /// Serves the line-delimited JSON solver socket.
    Serve {
        #[arg(long, default_value_t = 9090)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

#[derive(Subcommand, Debug)]
enum ProxyCmd {
    Serve {
        #[arg(long, env = "TWIN_CONTROLLER_URL", default_value = "http://127.0.0.1:8080")]
        controller_url: String,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Push cadence of /api/stream, ms.
        #[arg(long, default_value_t = 50)]
        cadence_ms: u64,
        /// Console bundle served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum BenchCmd {
    /// Loopback polling benchmark (criterion 1).
    Refresh {
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
    },
    /// Read latency while the camera works (criterion 2).
    Camera {
        #[arg(long, default_value_t = 150)]
        camera_delay_ms: u64,
        #[arg(long, default_value_t = 2)]
        cycles: u64,
    },
    /// Repeated home -> +100 mm x moves (criterion 3).
    Linear {
        #[arg(long, default_value_t = 50)]
        reps: usize,
    },
    /// One recorded cycle cross-checked against every pose source (criterion 4).
    Trajectory,
    /// Jacobian, oracle, IK convergence and descent properties (criterion 5).
    Kinematics {
        #[arg(long, default_value_t = 20)]
        seed: u64,
    },
    /// Digest handshake and codec round trip (criterion 6).
    Protocol {
        #[arg(long, default_value_t = 10_000)]
        cases: usize,
        #[arg(long, default_value_t = 6)]
        seed: u64,
    },
    /// Random action sequences against the workcell model (criterion 7).
    ModelCheck {
        #[arg(long, default_value_t = 10_000)]
        sequences: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Every criterion in order.
    All,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, got {}", parts.len()));
    }
    let mut out = [0.0_f64; N];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
        if !o.is_finite() {
            return Err(format!("`{p}` is not finite"));
        }
    }
    Ok(out)
}

fn parse_joints(s: &str) -> Result<[f64; JOINTS], String> {
    parse_floats::<JOINTS>(s)
}

fn parse_pose(s: &str) -> Result<[f64; 7], String> {
    parse_floats::<7>(s)
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string(value).expect("output serialises"));
    } else {
        println!("{}", text());
    }
}

fn fmt_joints(q: &[f64; JOINTS]) -> String {
    q.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ")
}

async fn interrupted_or(duration: Option<Duration>) {
    match duration {
        Some(d) => {
            tokio::select! {
                _ = tokio::time::sleep(d) => {}
                _ = tokio::signal::ctrl_c() => {}
            }
        }
        None => {
            let _ = tokio::signal::ctrl_c().await;
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    match runtime.block_on(run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// `Ok(false)` means the command ran but did not succeed.
async fn run(cli: Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let json = cli.json;
    match cli.command {
        Command::Emulator {
            action: EmulatorCmd::Serve { port, host, camera_delay_ms, seed },
        } => emulator_serve(cfg, SocketAddr::new(host, port), camera_delay_ms, seed).await,
        Command::Twin(args) => twin(cfg, json, args).await,
        Command::Ik { action } => ik(cfg, json, action).await,
        Command::Proxy {
            action: ProxyCmd::Serve { controller_url, port, host, cadence_ms, static_dir },
        } => {
            let gw = connect(&cfg, &controller_url).await?;
            let pcfg = ProxyConfig {
                cadence: Duration::from_millis(cadence_ms.max(1)),
                static_dir,
                ..ProxyConfig::default()
            };
            let handle = proxy::serve(Arc::clone(&gw), SocketAddr::new(host, port), pcfg).await?;
            println!("proxy listening on {}", handle.base_url());
            interrupted_or(None).await;
            handle.shutdown().await;
            gw.twin().stop();
            Ok(true)
        }
        Command::Bench { action } => bench(cfg, json, action).await,
    }
}

async fn emulator_serve(
    mut cfg: Config,
    addr: SocketAddr,
    camera_delay_ms: Option<u64>,
    seed: Option<u64>,
) -> Result<bool> {
    if let Some(d) = camera_delay_ms {
        cfg.emulator.camera_delay_ms = d;
    }
    if let Some(s) = seed {
        cfg.emulator.seed = s;
    }
    let emu = EmulatorServer::from_config(&cfg)?.spawn(addr).await?;
    println!("emulator listening on {}", emu.base_url());
    let mut since = 0;
    let mut tick = tokio::time::interval(Duration::from_millis(100));
    let stop = tokio::signal::ctrl_c();
    tokio::pin!(stop);
    loop {
        tokio::select! {
            _ = &mut stop => break,
            _ = tick.tick() => {
                let log = emu.spylog_read(since);
                for e in log.events.iter().filter(|e| parse_phase(&e.text).is_some()) {
                    println!("{} {}", e.timestamp_ms, e.text);
                }
                since = log.next_since;
            }
        }
    }
    emu.shutdown().await;
    Ok(true)
}

async fn connect(cfg: &Config, url: &str) -> Result<Arc<MotionGateway>> {
    let twin = TwinHandle::start(TwinConfig {
        controller_url: url.to_string(),
        credentials: cfg.credentials.clone(),
        robot: cfg.robot.clone(),
        ..TwinConfig::default()
    })?;
    if !twin.wait_connected(Duration::from_secs(5)).await {
        let reason = twin.store().connection().reason.unwrap_or_else(|| "no response".into());
        twin.shutdown().await;
        bail!("cannot reach controller at {url}: {reason}");
    }
    Ok(Arc::new(MotionGateway::new(Arc::new(twin), cfg.solver.clone())?))
}

async fn settle(gw: &MotionGateway, json: bool, ticket: Ticket) -> Result<bool> {
    let done = gw
        .wait(ticket.id, Duration::from_secs(60))
        .await
        .ok_or_else(|| anyhow!("ticket {} vanished", ticket.id))?;
    emit(json, &done, || {
        let mut s = format!("ticket {} {:?}", done.id, done.status).to_lowercase();
        if let Some(t) = &done.target_deg {
            s.push_str(&format!(" target [{}]", fmt_joints(t)));
        }
        if let Some(r) = &done.reason {
            s.push_str(&format!(": {r}"));
        }
        s
    });
    Ok(done.status == TicketStatus::Done)
}

async fn twin(cfg: Config, json: bool, args: TwinArgs) -> Result<bool> {
    let gw = connect(&cfg, &args.controller_url).await?;
    let store = Arc::clone(gw.twin().store());
    let ok = match args.action {
        TwinCmd::Run { duration } => {
            let stop = interrupted_or(duration.map(Duration::from_secs_f64));
            tokio::pin!(stop);
            let mut tick = tokio::time::interval(Duration::from_secs(1));
            loop {
                tokio::select! {
                    _ = &mut stop => break,
                    _ = tick.tick() => {
                        let view = proxy::aggregate_view(&store);
                        emit(json, &view, || {
                            let q = view.joints.as_ref().map(|j| fmt_joints(&j.deg)).unwrap_or_default();
                            let periods: Vec<String> = view
                                .refresh
                                .iter()
                                .map(|w| format!("{} {:.1} ms", w.stream, w.period_ms))
                                .collect();
                            format!(
                                "{:?} phase={} q=[{q}] {}",
                                view.connection.state,
                                view.cycle_phase.map_or("?", |p| p.as_str()),
                                periods.join(" ")
                            )
                        });
                    }
                }
            }
            true
        }
        TwinCmd::Jog { absolute, relative } => {
            let cmd = match (absolute, relative) {
                (Some(j), _) => JogCommand { mode: JogMode::Absolute, joints: j },
                (None, Some(j)) => JogCommand { mode: JogMode::Relative, joints: j },
                (None, None) => unreachable!("clap requires one of the two"),
            };
            let t = gw.jog(cmd).await?;
            settle(&gw, json, t).await?
        }
        TwinCmd::Linear { dx, dy, dz, free_orientation } => {
            let mut cmd = LinearCommand::new(dx, dy, dz);
            cmd.keep_orientation = !free_orientation;
            let t = gw.linear_move(cmd).await?;
            settle(&gw, json, t).await?
        }
        TwinCmd::Pointer { action } => {
            let t = gw.pointer_op(action.into()).await?;
            settle(&gw, json, t).await?
        }
        TwinCmd::Do { name, value } => {
            let t = gw.set_do(&name, value).await?;
            settle(&gw, json, t).await?
        }
        TwinCmd::Record { cycles, duration, out } => {
            store.start_recording();
            if let Some(n) = cycles {
                gw.pointer_op(ExecutionAction::Resetpp).await?;
                gw.pointer_op(ExecutionAction::Start).await?;
                let mut rx = store.subscribe_joints();
                let deadline = tokio::time::Instant::now() + Duration::from_secs(90) * n as u32;
                let mut completed = 0;
                let mut was_return = false;
                while completed < n && tokio::time::Instant::now() < deadline {
                    tokio::select! {
                        _ = rx.changed() => {}
                        _ = tokio::time::sleep(Duration::from_millis(50)) => {}
                    }
                    let is_return = store.phase() == Some(CyclePhase::Return);
                    if was_return && !is_return {
                        completed += 1;
                    }
                    was_return = is_return;
                }
                gw.pointer_op(ExecutionAction::Stop).await?;
            } else {
                interrupted_or(Some(Duration::from_secs_f64(duration.unwrap_or(10.0)))).await;
            }
            store.stop_recording();
            let rec = store.trajectory();
            let csv = rec.to_csv();
            match out {
                Some(path) => {
                    std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
                    emit(json, &json!({"rows": rec.joints().len(), "tcp_rows": rec.tcp().len(), "out": path}), || {
                        format!("{} joint rows written to {} ({CSV_HEADER})", rec.joints().len(), path.display())
                    });
                }
                None => print!("{csv}"),
            }
            true
        }
        TwinCmd::Metrics { duration } => {
            tokio::time::sleep(Duration::from_secs_f64(duration)).await;
            let stats = store.refresh_stats();
            emit(json, &stats, || {
                let mut s = String::from("stream     window  count  period_ms  max_ms  warmup\n");
                for kind in StreamKind::ALL {
                    if let Some(st) = stats.stream(kind) {
                        for w in &st.windows {
                            s.push_str(&format!(
                                "{:<10} {:>6} {:>6} {:>10.2} {:>7.1} {:>7}\n",
                                kind.as_str(),
                                w.index,
                                w.window_count,
                                w.period_ms,
                                w.max_period_ms,
                                w.warmup
                            ));
                        }
                    }
                }
                s
            });
            true
        }
    };
    gw.twin().stop();
    Ok(ok)
}

async fn ik(cfg: Config, json: bool, action: IkCmd) -> Result<bool> {
    match action {
        IkCmd::Solve { target, seed } => {
            let pose = Pose::from_wxyz(
                [target[0], target[1], target[2]],
                [target[3], target[4], target[5], target[6]],
            )?;
            let problem = IkProblem::new(pose, JointConfig::from_degrees(seed), &cfg.solver);
            let r = solve_ik(&cfg.robot, &problem)?;
            let deg = r.solution.to_degrees();
            let out = json!({
                "solution": deg,
                "converged": r.converged,
                "iterations": r.iterations,
                "pos_err_mm": r.pos_err_mm,
                "orient_err_rad": r.orient_err_rad,
            });
            emit(json, &out, || {
                format!(
                    "{} after {} iterations: [{}] (pos err {:.2e} mm, orient err {:.2e} rad)",
                    if r.converged { "converged" } else { "not converged" },
                    r.iterations,
                    fmt_joints(&deg),
                    r.pos_err_mm,
                    r.orient_err_rad
                )
            });
            Ok(r.converged)
        }
        IkCmd::Serve { port, host } => {
            let svc = SolverService::bind(SocketAddr::new(host, port), cfg.robot.clone(), cfg.solver.clone()).await?;
            println!("solver listening on {}", svc.addr());
            interrupted_or(None).await;
            svc.shutdown().await;
            Ok(true)
        }
    }
}

async fn bench(cfg: Config, json: bool, action: BenchCmd) -> Result<bool> {
    let reports = match action {
        BenchCmd::Refresh { duration } => {
            let r = sc::refresh_benchmark(&cfg, Duration::from_secs_f64(duration)).await?;
            if !json {
                print!("{}", r.table());
            }
            vec![sc::judge_refresh(&r)]
        }
        BenchCmd::Camera { camera_delay_ms, cycles } => {
            vec![sc::judge_camera(&sc::camera_latency(&cfg, camera_delay_ms, cycles).await?)]
        }
        BenchCmd::Linear { reps } => vec![sc::judge_linear(&sc::linear_repeatability(&cfg, reps).await?)],
        BenchCmd::Trajectory => vec![sc::judge_trajectory(&sc::trajectory_mapping(&cfg).await?)],
        BenchCmd::Kinematics { seed } => {
            vec![sc::judge_kinematics(&sc::kinematics_suite(&cfg.robot, &cfg.solver, seed)?)]
        }
        BenchCmd::Protocol { cases, seed } => {
            vec![sc::judge_protocol(&sc::protocol_suite(&cfg, cases, seed).await?)]
        }
        BenchCmd::ModelCheck { sequences, seed } => {
            vec![sc::judge_model_check(&sc::model_check(&cfg, sequences, seed)?)]
        }
        BenchCmd::All => run_all(&cfg).await,
    };
    for r in &reports {
        emit(json, r, || r.to_string());
    }
    Ok(reports.iter().all(|r| r.passed))
}

async fn run_all(cfg: &Config) -> Vec<CriterionReport> {
    fn judged<T>(id: u8, r: sc::ScenarioResult<T>, judge: impl FnOnce(&T) -> CriterionReport) -> CriterionReport {
        r.map_or_else(|e| CriterionReport::aborted(id, sc::TITLES[usize::from(id) - 1], &e), |v| judge(&v))
    }
    vec![
        judged(1, sc::refresh_benchmark(cfg, Duration::from_secs(60)).await, sc::judge_refresh),
        judged(2, sc::camera_latency(cfg, 150, 2).await, sc::judge_camera),
        judged(3, sc::linear_repeatability(cfg, 50).await, sc::judge_linear),
        judged(4, sc::trajectory_mapping(cfg).await, sc::judge_trajectory),
        judged(5, sc::kinematics_suite(&cfg.robot, &cfg.solver, 20), sc::judge_kinematics),
        judged(6, sc::protocol_suite(cfg, 10_000, 6).await, sc::judge_protocol),
        judged(7, sc::model_check(cfg, 10_000, 7), sc::judge_model_check),
    ]
}
