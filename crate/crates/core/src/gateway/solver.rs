//! IK solver exposed over a line-delimited JSON stream socket.
//!
//! Requests, one JSON object per line:
//!
//! ```text
//! {"target":{"pos":[474,0,630],"quat":[0.7071,0,0.7071,0]},"seed":[0,0,0,0,0,0]}
//! {"fk":[0,0,0,0,0,0]}
//! ```
//!
//! Joint values are degrees. A malformed line gets an error reply carrying
//! the parse position and the connection stays open.

use std::net::SocketAddr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::kinematics::{
    forward_kinematics, solve_ik, DhTable, IkProblem, JointConfig, Pose, SolverSettings, JOINTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub pos: [f64; 3],
    pub quat: [f64; 4],
}

impl From<&Pose> for WirePose {
    fn from(p: &Pose) -> Self {
        Self {
            pos: [p.position.x, p.position.y, p.position.z],
            quat: p.quat_wxyz(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SolverRequest {
    Solve {
        target: WirePose,
        seed: [f64; JOINTS],
    },
    Fk {
        fk: [f64; JOINTS],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReply {
    pub solution: [f64; JOINTS],
    pub converged: bool,
    pub iterations: usize,
    pub pos_err_mm: f64,
    pub orient_err_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SolverReply {
    Solve(SolveReply),
    Fk(WirePose),
    Error(ErrorReply),
}

fn error_reply(error: String) -> SolverReply {
    SolverReply::Error(ErrorReply {
        error,
        line: None,
        column: None,
    })
}

/// Answers one request line. The same function backs the socket and
/// in-process callers.
pub fn handle_line(dh: &DhTable, settings: &SolverSettings, line: &str) -> SolverReply {
    let req: SolverRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            return SolverReply::Error(ErrorReply {
                error: e.to_string(),
                line: Some(e.line()),
                column: Some(e.column()),
            })
        }
    };
    match req {
        SolverRequest::Fk { fk } => match forward_kinematics(dh, &JointConfig::from_degrees(fk)) {
            Ok(p) => SolverReply::Fk(WirePose::from(&p)),
            Err(e) => error_reply(e.to_string()),
        },
        SolverRequest::Solve { target, seed } => {
            let target = match Pose::from_wxyz(target.pos, target.quat) {
                Ok(t) => t,
                Err(e) => return error_reply(e.to_string()),
            };
            let problem = IkProblem::new(target, JointConfig::from_degrees(seed), settings);
            match solve_ik(dh, &problem) {
                Ok(r) => SolverReply::Solve(SolveReply {
                    solution: r.solution.to_degrees(),
                    converged: r.converged,
                    iterations: r.iterations,
                    pos_err_mm: r.pos_err_mm,
                    orient_err_rad: r.orient_err_rad,
                }),
                Err(e) => error_reply(e.to_string()),
            }
        }
    }
}

pub struct SolverService {
    addr: SocketAddr,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl SolverService {
    pub async fn bind(
        addr: SocketAddr,
        dh: DhTable,
        settings: SolverSettings,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (stop, mut stop_rx) = watch::channel(false);
        let ctx = Arc::new((dh, settings));
        let conn_stop = stop_rx.clone();
        let task = tokio::spawn(async move {
            loop {
                tokio::select! {
                    accepted = listener.accept() => match accepted {
                        Ok((sock, _)) => {
                            tokio::spawn(serve_connection(sock, Arc::clone(&ctx), conn_stop.clone()));
                        }
                        Err(e) => tracing::warn!("solver accept: {e}"),
                    },
                    _ = stop_rx.wait_for(|s| *s) => break,
                }
            }
        });
        Ok(Self { addr, stop, task })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
    }
}

async fn serve_connection(
    sock: TcpStream,
    ctx: Arc<(DhTable, SolverSettings)>,
    mut stop: watch::Receiver<bool>,
) {
    let _ = sock.set_nodelay(true);
    let (rd, mut wr) = sock.into_split();
    let mut lines = BufReader::new(rd).lines();
    loop {
        let line = tokio::select! {
            l = lines.next_line() => l,
            _ = stop.wait_for(|s| *s) => return,
        };
        let line = match line {
            Ok(Some(l)) => l,
            _ => return,
        };
        if line.trim().is_empty() {
            continue;
        }
        let reply = {
            let ctx = Arc::clone(&ctx);
            tokio::task::spawn_blocking(move || handle_line(&ctx.0, &ctx.1, &line))
                .await
                .unwrap_or_else(|e| error_reply(e.to_string()))
        };
        let mut out = serde_json::to_vec(&reply).expect("replies serialise");
        out.push(b'\n');
        if wr.write_all(&out).await.is_err() {
            return;
        }
    }
}

/// Minimal client for the solver socket.
pub struct SolverClient {
    lines: tokio::io::Lines<BufReader<tokio::net::tcp::OwnedReadHalf>>,
    wr: tokio::net::tcp::OwnedWriteHalf,
}

impl SolverClient {
    pub async fn connect(addr: SocketAddr) -> std::io::Result<Self> {
        let sock = TcpStream::connect(addr).await?;
        sock.set_nodelay(true)?;
        let (rd, wr) = sock.into_split();
        Ok(Self {
            lines: BufReader::new(rd).lines(),
            wr,
        })
    }

    pub async fn send_raw(&mut self, line: &str) -> std::io::Result<SolverReply> {
        self.wr.write_all(line.as_bytes()).await?;
        self.wr.write_all(b"\n").await?;
        let reply = self
            .lines
            .next_line()
            .await?
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "solver closed"))?;
        serde_json::from_str(&reply).map_err(std::io::Error::other)
    }

    pub async fn request(&mut self, req: &SolverRequest) -> std::io::Result<SolverReply> {
        let line = serde_json::to_string(req).expect("requests serialise");
        self.send_raw(&line).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fk_request_matches_in_process() {
        let dh = DhTable::irb120();
        let reply = handle_line(&dh, &SolverSettings::default(), r#"{"fk":[0,0,0,0,0,0]}"#);
        let SolverReply::Fk(p) = reply else { panic!("{reply:?}") };
        assert!((p.pos[0] - 374.0).abs() < 1e-9 && (p.pos[2] - 630.0).abs() < 1e-9);
    }

    #[test]
    fn garbage_reports_position() {
        let reply = handle_line(&DhTable::irb120(), &SolverSettings::default(), "{\"fk\": [1,2,");
        let SolverReply::Error(e) = reply else { panic!("{reply:?}") };
        assert_eq!(e.line, Some(1));
        assert!(e.column.unwrap() > 0);
    }

    #[test]
    fn seed_pose_replies_seed() {
        let dh = DhTable::irb120();
        let seed = [10.0, 20.0, -10.0, 30.0, 45.0, 0.0];
        let p = forward_kinematics(&dh, &JointConfig::from_degrees(seed)).unwrap();
        let req = SolverRequest::Solve {
            target: WirePose::from(&p),
            seed,
        };
        let line = serde_json::to_string(&req).unwrap();
        let SolverReply::Solve(r) = handle_line(&dh, &SolverSettings::default(), &line) else {
            panic!()
        };
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        for (a, b) in r.solution.iter().zip(seed) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
