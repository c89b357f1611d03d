//! Refresh-period accounting: responses counted in fixed one-second windows.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Closed windows kept per stream.
pub const WINDOW_HISTORY: usize = 120;
const WINDOW_MS: f64 = 1000.0;
const EWMA_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Joints,
    Robtarget,
    Io,
    Spylog,
}

impl StreamKind {
    pub const DATA: [StreamKind; 3] = [StreamKind::Joints, StreamKind::Robtarget, StreamKind::Io];
    pub const ALL: [StreamKind; 4] = [
        StreamKind::Joints,
        StreamKind::Robtarget,
        StreamKind::Io,
        StreamKind::Spylog,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Joints => "joints",
            StreamKind::Robtarget => "robtarget",
            StreamKind::Io => "io",
            StreamKind::Spylog => "spylog",
        }
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub stream: StreamKind,
    pub index: u64,
    /// Window bounds on the unix clock, ms.
    pub start_ms: f64,
    pub end_ms: f64,
    pub window_count: u32,
    /// `1000 / window_count`.
    pub period_ms: f64,
    pub ewma_period_ms: f64,
    /// Longest gap between consecutive responses that ended in this window.
    pub max_period_ms: f64,
    pub warmup: bool,
}

/// Counts responses of one stream. Time is passed in by the caller (unix
/// ms) so the counter can be driven by a simulated clock in tests.
#[derive(Debug, Clone)]
pub struct RefreshCounter {
    stream: StreamKind,
    origin_ms: Option<f64>,
    index: u64,
    count: u32,
    max_gap: f64,
    last_ms: Option<f64>,
    ewma: Option<f64>,
    history: VecDeque<WindowStats>,
    emitted: u64,
}

impl RefreshCounter {
    pub fn new(stream: StreamKind) -> Self {
        Self {
            stream,
            origin_ms: None,
            index: 0,
            count: 0,
            max_gap: 0.0,
            last_ms: None,
            ewma: None,
            history: VecDeque::new(),
            emitted: 0,
        }
    }

    pub fn stream(&self) -> StreamKind {
        self.stream
    }

    fn window_start(&self, index: u64) -> f64 {
        self.origin_ms.unwrap_or(0.0) + index as f64 * WINDOW_MS
    }

    /// Records one completed response at `now_ms`.
    pub fn record(&mut self, now_ms: f64) {
        if self.origin_ms.is_none() {
            self.origin_ms = Some(now_ms);
        }
        self.roll(now_ms);
        if let Some(last) = self.last_ms {
            let gap = (now_ms - last).max(0.0);
            self.max_gap = self.max_gap.max(gap);
            self.ewma = Some(match self.ewma {
                Some(e) => e + EWMA_ALPHA * (gap - e),
                None => gap,
            });
        }
        self.last_ms = Some(now_ms);
        self.count += 1;
    }

    /// Closes every window that ended before `now_ms`.
    pub fn flush(&mut self, now_ms: f64) {
        if self.origin_ms.is_some() {
            self.roll(now_ms);
        }
    }

    fn roll(&mut self, now_ms: f64) {
        while now_ms >= self.window_start(self.index + 1) {
            self.close_window();
            self.index += 1;
        }
    }

    fn close_window(&mut self) {
        if self.count > 0 {
            let period = WINDOW_MS / f64::from(self.count);
            let stats = WindowStats {
                stream: self.stream,
                index: self.index,
                start_ms: self.window_start(self.index),
                end_ms: self.window_start(self.index + 1),
                window_count: self.count,
                period_ms: period,
                ewma_period_ms: self.ewma.unwrap_or(period),
                max_period_ms: if self.max_gap > 0.0 { self.max_gap } else { period },
                warmup: self.index == 0,
            };
            if self.history.len() == WINDOW_HISTORY {
                self.history.pop_front();
            }
            self.history.push_back(stats);
            self.emitted += 1;
        }
        self.count = 0;
        self.max_gap = 0.0;
    }

    /// Closed windows, oldest first (at most [`WINDOW_HISTORY`]).
    pub fn windows(&self) -> impl Iterator<Item = &WindowStats> {
        self.history.iter()
    }

    pub fn latest(&self) -> Option<&WindowStats> {
        self.history.back()
    }

    /// Total windows closed since creation, including evicted ones.
    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Closed windows as line-delimited JSON.
    pub fn to_json_lines(&self) -> String {
        windows_to_json_lines(self.history.iter())
    }
}

pub fn windows_to_json_lines<'a>(windows: impl IntoIterator<Item = &'a WindowStats>) -> String {
    let mut out = String::new();
    for w in windows {
        out.push_str(&serde_json::to_string(w).expect("stats serialise"));
        out.push('\n');
    }
    out
}

/// Mean period over windows passing `keep`.
pub fn mean_period<'a>(
    windows: impl IntoIterator<Item = &'a WindowStats>,
    mut keep: impl FnMut(&WindowStats) -> bool,
) -> Option<f64> {
    let (sum, n) = windows
        .into_iter()
        .filter(|w| keep(w))
        .fold((0.0, 0usize), |(s, n), w| (s + w.period_ms, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Snapshot of every stream's latest window and history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefreshStats {
    pub streams: Vec<StreamStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub stream: StreamKind,
    pub latest: Option<WindowStats>,
    pub windows: Vec<WindowStats>,
}

impl RefreshStats {
    pub fn stream(&self, kind: StreamKind) -> Option<&StreamStats> {
        self.streams.iter().find(|s| s.stream == kind)
    }
}
