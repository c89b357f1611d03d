//! Shared state store written by the polling loops.
//!
//! Each stream publishes whole samples behind an `Arc`, so readers always
//! get a value, seq and timestamp from the same response.

use std::collections::VecDeque;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use super::events::{derive_events, AbstractEvent};
use super::telemetry::{RefreshCounter, RefreshStats, StreamKind, StreamStats};
use super::trajectory::{TcpRow, TrajectoryRecorder, TrajectoryRow};
use super::unix_now_ms;
use crate::emulator::CyclePhase;
use crate::kinematics::{forward_kinematics, DhTable, JointConfig, Pose};
use crate::wire::{IoSnapshotMsg, JointTargetMsg, ProtocolError, RobTargetMsg, SpyEvent};

pub const EVENT_RING: usize = 1000;
pub const SPYLOG_RING: usize = 2000;
/// Consecutive failures after which a stream counts as down.
pub const DOWN_AFTER_FAILURES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub value: T,
    pub seq: u64,
    pub timestamp_ms: u64,
}

impl<T> Sample<T> {
    pub fn age_ms(&self, now_ms: f64) -> f64 {
        (now_ms - self.timestamp_ms as f64).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionState {
    Up,
    Degraded,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub state: ConnectionState,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Default)]
struct StreamHealth {
    ever_ok: bool,
    failures: u32,
    fatal: bool,
    last_error: Option<String>,
}

fn accept<T>(slot: &watch::Sender<Option<Arc<Sample<T>>>>, sample: Sample<T>) -> Option<Arc<Sample<T>>> {
    let sample = Arc::new(sample);
    let accepted = slot.send_if_modified(|cur| {
        let newer = match cur {
            None => true,
            Some(prev) => sample.seq > prev.seq || sample.timestamp_ms > prev.timestamp_ms,
        };
        if newer {
            *cur = Some(Arc::clone(&sample));
        }
        newer
    });
    accepted.then_some(sample)
}

pub struct TwinStore {
    dh: DhTable,
    joints: watch::Sender<Option<Arc<Sample<JointConfig>>>>,
    tcp: watch::Sender<Option<Arc<Sample<Pose>>>>,
    io: watch::Sender<Option<Arc<IoSnapshotMsg>>>,
    events: RwLock<VecDeque<AbstractEvent>>,
    spylog: RwLock<VecDeque<SpyEvent>>,
    phase: RwLock<Option<CyclePhase>>,
    health: Mutex<[StreamHealth; 4]>,
    telemetry: Mutex<Vec<RefreshCounter>>,
    trajectory: Mutex<TrajectoryRecorder>,
}

impl TwinStore {
    pub fn new(dh: DhTable) -> Self {
        Self {
            dh,
            joints: watch::channel(None).0,
            tcp: watch::channel(None).0,
            io: watch::channel(None).0,
            events: RwLock::new(VecDeque::new()),
            spylog: RwLock::new(VecDeque::new()),
            phase: RwLock::new(None),
            health: Mutex::new(Default::default()),
            telemetry: Mutex::new(StreamKind::ALL.map(RefreshCounter::new).to_vec()),
            trajectory: Mutex::new(TrajectoryRecorder::default()),
        }
    }

    pub fn dh(&self) -> &DhTable {
        &self.dh
    }

    pub fn joints(&self) -> Option<Arc<Sample<JointConfig>>> {
        self.joints.borrow().clone()
    }

    pub fn tcp(&self) -> Option<Arc<Sample<Pose>>> {
        self.tcp.borrow().clone()
    }

    pub fn io(&self) -> Option<Arc<IoSnapshotMsg>> {
        self.io.borrow().clone()
    }

    pub fn subscribe_joints(&self) -> watch::Receiver<Option<Arc<Sample<JointConfig>>>> {
        self.joints.subscribe()
    }

    pub fn phase(&self) -> Option<CyclePhase> {
        *self.phase.read()
    }

    /// Most recent `n` events, oldest first.
    pub fn events_tail(&self, n: usize) -> Vec<AbstractEvent> {
        let ev = self.events.read();
        ev.iter().skip(ev.len().saturating_sub(n)).cloned().collect()
    }

    pub fn spylog_tail(&self, n: usize) -> Vec<SpyEvent> {
        let log = self.spylog.read();
        log.iter().skip(log.len().saturating_sub(n)).cloned().collect()
    }

    pub fn last_spylog_seq(&self) -> u64 {
        self.spylog.read().back().map_or(0, |e| e.seq)
    }

    pub fn accept_joints(&self, msg: &JointTargetMsg) -> bool {
        let q = msg.to_config();
        let Some(s) = accept(
            &self.joints,
            Sample {
                value: q,
                seq: msg.seq,
                timestamp_ms: msg.timestamp_ms,
            },
        ) else {
            return false;
        };
        let mut rec = self.trajectory.lock();
        if rec.is_recording() {
            if let Ok(pose) = forward_kinematics(&self.dh, &q) {
                rec.push_joints(TrajectoryRow {
                    t_ms: s.timestamp_ms,
                    seq: s.seq,
                    q,
                    pose,
                });
            }
        }
        true
    }

    pub fn accept_tcp(&self, msg: &RobTargetMsg) -> Result<bool, ProtocolError> {
        let pose = msg.to_pose()?;
        let Some(s) = accept(
            &self.tcp,
            Sample {
                value: pose,
                seq: msg.seq,
                timestamp_ms: msg.timestamp_ms,
            },
        ) else {
            return Ok(false);
        };
        self.trajectory.lock().push_tcp(TcpRow {
            t_ms: s.timestamp_ms,
            seq: s.seq,
            pose,
        });
        Ok(true)
    }

    /// Stores the snapshot and appends the events derived from the previous one.
    pub fn accept_io(&self, msg: IoSnapshotMsg) -> Vec<AbstractEvent> {
        let next = Arc::new(msg);
        let mut prev = None;
        let accepted = self.io.send_if_modified(|cur| {
            let newer = cur.as_ref().is_none_or(|p| next.seq > p.seq || next.timestamp_ms > p.timestamp_ms);
            if newer {
                prev = cur.replace(Arc::clone(&next));
            }
            newer
        });
        if !accepted {
            return Vec::new();
        }
        let Some(prev) = prev else {
            return Vec::new();
        };
        let fresh = derive_events(&prev, &next);
        if !fresh.is_empty() {
            let mut ring = self.events.write();
            for e in &fresh {
                if ring.len() == EVENT_RING {
                    ring.pop_front();
                }
                ring.push_back(e.clone());
            }
        }
        fresh
    }

    /// Appends spy-log events not seen yet; returns how many were new.
    pub fn accept_spylog(&self, events: &[SpyEvent]) -> usize {
        let mut log = self.spylog.write();
        let mut last = log.back().map_or(0, |e| e.seq);
        let mut added = 0;
        for e in events {
            if e.seq <= last {
                continue;
            }
            if let Some(p) = parse_phase(&e.text) {
                *self.phase.write() = Some(p);
            }
            if log.len() == SPYLOG_RING {
                log.pop_front();
            }
            log.push_back(e.clone());
            last = e.seq;
            added += 1;
        }
        added
    }

    pub fn record_success(&self, kind: StreamKind, now_ms: f64) {
        {
            let mut h = self.health.lock();
            let s = &mut h[kind as usize];
            s.ever_ok = true;
            s.failures = 0;
            s.fatal = false;
            s.last_error = None;
        }
        self.telemetry.lock()[kind as usize].record(now_ms);
    }

    /// `fatal` failures (bad credentials) mark the stream down at once.
    pub fn record_failure(&self, kind: StreamKind, reason: String, fatal: bool) {
        let mut h = self.health.lock();
        let s = &mut h[kind as usize];
        s.failures = s.failures.saturating_add(1);
        s.fatal |= fatal;
        s.last_error = Some(reason);
    }

    pub fn connection(&self) -> Connection {
        let h = self.health.lock();
        let mut worst = ConnectionState::Up;
        let mut reason = None;
        for (kind, s) in StreamKind::DATA.iter().map(|k| (k, &h[*k as usize])) {
            let state = if s.fatal || s.failures >= DOWN_AFTER_FAILURES || !s.ever_ok {
                ConnectionState::Down
            } else if s.failures > 0 {
                ConnectionState::Degraded
            } else {
                ConnectionState::Up
            };
            let rank = |c| match c {
                ConnectionState::Up => 0,
                ConnectionState::Degraded => 1,
                ConnectionState::Down => 2,
            };
            if rank(state) > rank(worst) {
                worst = state;
                reason = Some(match &s.last_error {
                    Some(e) => format!("{kind}: {e}"),
                    None => format!("{kind}: no response yet"),
                });
            }
        }
        Connection {
            state: worst,
            reason,
        }
    }

    pub fn refresh_stats(&self) -> RefreshStats {
        let now = unix_now_ms();
        let mut t = self.telemetry.lock();
        RefreshStats {
            streams: t
                .iter_mut()
                .map(|c| {
                    c.flush(now);
                    StreamStats {
                        stream: c.stream(),
                        latest: c.latest().copied(),
                        windows: c.windows().copied().collect(),
                    }
                })
                .collect(),
        }
    }

    pub fn start_recording(&self) {
        self.trajectory.lock().start();
    }

    pub fn stop_recording(&self) {
        self.trajectory.lock().stop();
    }

    pub fn trajectory(&self) -> TrajectoryRecorder {
        self.trajectory.lock().clone()
    }
}

/// Extracts the `phase=NAME` token of a program log line.
pub fn parse_phase(text: &str) -> Option<CyclePhase> {
    text.split_whitespace()
        .find_map(|tok| tok.strip_prefix("phase="))
        .and_then(CyclePhase::parse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{IoSignal, LogLevel, SignalKind, MANDATORY_SIGNALS};

    fn io(seq: u64, high: &[&str]) -> IoSnapshotMsg {
        IoSnapshotMsg {
            signals: MANDATORY_SIGNALS
                .iter()
                .map(|n| IoSignal {
                    name: n.to_string(),
                    kind: if n.starts_with("DI") {
                        SignalKind::DI
                    } else {
                        SignalKind::DO
                    },
                    value: u8::from(high.contains(n)),
                })
                .collect(),
            seq,
            timestamp_ms: seq,
        }
    }

    #[test]
    fn seq_never_goes_back() {
        let s = TwinStore::new(DhTable::irb120());
        let m = |seq, ts| JointTargetMsg {
            joints: [seq as f64; 6],
            seq,
            timestamp_ms: ts,
        };
        assert!(s.accept_joints(&m(5, 100)));
        assert!(!s.accept_joints(&m(4, 100)));
        assert_eq!(s.joints().unwrap().seq, 5);
        assert!(s.accept_joints(&m(6, 104)));
    }

    #[test]
    fn io_edges_feed_the_event_ring() {
        let s = TwinStore::new(DhTable::irb120());
        assert!(s.accept_io(io(1, &[])).is_empty());
        assert_eq!(s.accept_io(io(2, &["DO_CONVEYOR"])).len(), 1);
        assert_eq!(s.events_tail(10).len(), 1);
    }

    #[test]
    fn spylog_dedup_and_phase() {
        let s = TwinStore::new(DhTable::irb120());
        let ev = |seq, text: &str| SpyEvent {
            seq,
            timestamp_ms: seq,
            level: LogLevel::Info,
            text: text.into(),
        };
        let batch = [ev(1, "phase=SPAWN cycle=1 shape=square"), ev(2, "phase=RECOGNIZE cycle=1")];
        assert_eq!(s.accept_spylog(&batch), 2);
        assert_eq!(s.accept_spylog(&batch), 0);
        assert_eq!(s.phase(), Some(CyclePhase::Recognize));
        assert_eq!(s.last_spylog_seq(), 2);
    }

    #[test]
    fn connection_transitions() {
        let s = TwinStore::new(DhTable::irb120());
        assert_eq!(s.connection().state, ConnectionState::Down);
        for k in StreamKind::DATA {
            s.record_success(k, 0.0);
        }
        assert_eq!(s.connection().state, ConnectionState::Up);
        s.record_failure(StreamKind::Io, "refused".into(), false);
        assert_eq!(s.connection().state, ConnectionState::Degraded);
        s.record_failure(StreamKind::Io, "refused".into(), false);
        s.record_failure(StreamKind::Io, "refused".into(), false);
        let c = s.connection();
        assert_eq!(c.state, ConnectionState::Down);
        assert!(c.reason.unwrap().starts_with("io"));
        s.record_success(StreamKind::Io, 1.0);
        assert_eq!(s.connection().state, ConnectionState::Up);
    }

    #[test]
    fn phase_token() {
        assert_eq!(parse_phase("phase=AT_B cycle=2"), Some(CyclePhase::AtB));
        assert_eq!(parse_phase("io DO_7=1"), None);
    }
}
