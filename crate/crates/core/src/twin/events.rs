//! Workcell events recovered from IO edges.

use serde::{Deserialize, Serialize};

use crate::emulator::{Shape, DI_IR, DO_CONVEYOR, DO_GRIP};
use crate::wire::IoSnapshotMsg;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum EventKind {
    ShapeRecognized(Shape),
    PieceAtB,
    ConveyorStart,
    ConveyorStop,
    GripOn,
    GripOff,
    /// Snapshot pair that cannot come from a healthy cell.
    IntegrityWarning(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractEvent {
    #[serde(flatten)]
    pub kind: EventKind,
    pub timestamp_ms: u64,
    pub source_signals: Vec<String>,
}

fn edge(prev: &IoSnapshotMsg, next: &IoSnapshotMsg, name: &str) -> Option<bool> {
    let (a, b) = (prev.is_high(name), next.is_high(name));
    (a != b).then_some(b)
}

/// Edge detection between two IO snapshots.
///
/// Events come out in a fixed order: shape, sensor, conveyor, gripper.
pub fn derive_events(prev: &IoSnapshotMsg, next: &IoSnapshotMsg) -> Vec<AbstractEvent> {
    let ts = next.timestamp_ms;
    let ev = |kind, sig: &str| AbstractEvent {
        kind,
        timestamp_ms: ts,
        source_signals: vec![sig.to_string()],
    };
    let mut out = Vec::new();

    let rising: Vec<Shape> = Shape::ALL
        .into_iter()
        .filter(|s| edge(prev, next, s.signal()) == Some(true))
        .collect();
    match rising.as_slice() {
        [] => {}
        [shape] => out.push(ev(EventKind::ShapeRecognized(*shape), shape.signal())),
        many => out.push(AbstractEvent {
            kind: EventKind::IntegrityWarning(format!(
                "{} shape outputs rose together",
                many.len()
            )),
            timestamp_ms: ts,
            source_signals: many.iter().map(|s| s.signal().to_string()).collect(),
        }),
    }
    if edge(prev, next, DI_IR) == Some(true) {
        out.push(ev(EventKind::PieceAtB, DI_IR));
    }
    match edge(prev, next, DO_CONVEYOR) {
        Some(true) => out.push(ev(EventKind::ConveyorStart, DO_CONVEYOR)),
        Some(false) => out.push(ev(EventKind::ConveyorStop, DO_CONVEYOR)),
        None => {}
    }
    match edge(prev, next, DO_GRIP) {
        Some(true) => out.push(ev(EventKind::GripOn, DO_GRIP)),
        Some(false) => out.push(ev(EventKind::GripOff, DO_GRIP)),
        None => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{IoSignal, SignalKind, MANDATORY_SIGNALS};

    fn io(high: &[&str], ts: u64) -> IoSnapshotMsg {
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
            seq: ts,
            timestamp_ms: ts,
        }
    }

    fn kinds(v: &[AbstractEvent]) -> Vec<EventKind> {
        v.iter().map(|e| e.kind.clone()).collect()
    }

    #[test]
    fn rectangle_lamp() {
        let out = derive_events(&io(&[], 1), &io(&["DO_4"], 2));
        assert_eq!(kinds(&out), [EventKind::ShapeRecognized(Shape::Rectangle)]);
        assert_eq!(out[0].source_signals, ["DO_4"]);
        assert_eq!(out[0].timestamp_ms, 2);
    }

    #[test]
    fn no_edges_no_events() {
        let a = io(&["DO_3", "DO_CONVEYOR"], 1);
        assert!(derive_events(&a, &a).is_empty());
    }

    #[test]
    fn sensor_and_conveyor_in_one_delta() {
        let out = derive_events(&io(&["DO_CONVEYOR"], 1), &io(&["DI_IR"], 2));
        assert_eq!(kinds(&out), [EventKind::PieceAtB, EventKind::ConveyorStop]);
    }

    #[test]
    fn two_shapes_rising_is_an_integrity_warning() {
        let out = derive_events(&io(&[], 1), &io(&["DO_3", "DO_5"], 2));
        assert_eq!(out.len(), 1);
        assert!(matches!(out[0].kind, EventKind::IntegrityWarning(_)));
        assert_eq!(out[0].source_signals, ["DO_3", "DO_5"]);
    }

    #[test]
    fn grip_edges() {
        let on = derive_events(&io(&[], 1), &io(&["DO_GRIP"], 2));
        let off = derive_events(&io(&["DO_GRIP"], 2), &io(&[], 3));
        assert_eq!(kinds(&on), [EventKind::GripOn]);
        assert_eq!(kinds(&off), [EventKind::GripOff]);
    }

    #[test]
    fn falling_shape_lamp_is_silent() {
        assert!(derive_events(&io(&["DO_5"], 1), &io(&[], 2)).is_empty());
    }
}
