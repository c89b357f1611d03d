use serde::{Deserialize, Serialize};

/// Emulated controller service behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmulatorSettings {
    pub tick_hz: f64,
    /// Extra latency added to every GET while the camera is busy.
    pub camera_delay_ms: u64,
    pub service_time_ms: ServiceTimes,
    /// Uniform jitter in `[0, jitter_ms)` added to every service time.
    pub jitter_ms: f64,
    pub seed: u64,
    pub spylog_capacity: usize,
    pub trajectory_capacity: usize,
}

impl Default for EmulatorSettings {
    fn default() -> Self {
        Self {
            tick_hz: 250.0,
            camera_delay_ms: 0,
            service_time_ms: ServiceTimes::default(),
            jitter_ms: 0.0,
            seed: 0,
            spylog_capacity: 10_000,
            trajectory_capacity: 250 * 600,
        }
    }
}

/// Time the emulated controller takes to answer each resource, ms.
///
/// The defaults reproduce the response times of an IRC5-class controller
/// over a local network: joint and TCP reads answer in about 16 ms, the
/// larger IO document in about 24 ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceTimes {
    pub jointtarget: f64,
    pub robtarget: f64,
    pub io: f64,
    pub spylog: f64,
    pub control: f64,
}

impl Default for ServiceTimes {
    fn default() -> Self {
        Self {
            jointtarget: 15.0,
            robtarget: 15.0,
            io: 23.0,
            spylog: 2.0,
            control: 2.0,
        }
    }
}

impl ServiceTimes {
    pub fn zero() -> Self {
        Self {
            jointtarget: 0.0,
            robtarget: 0.0,
            io: 0.0,
            spylog: 0.0,
            control: 0.0,
        }
    }
}

/// Stacking cell layout and cycle timing. Positions in mm, base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkcellSettings {
    pub spawn_s: f64,
    pub recognize_s: f64,
    pub convey_s: f64,
    /// Pause at location B before the pick motion starts.
    pub settle_s: f64,
    /// Fraction of the joint speed limits used by the stacking program.
    pub program_speed: f64,
    /// Tool orientation for pick and place, w-first.
    pub tool_down: [f64; 4],
    pub location_b: [f64; 3],
    pub approach_mm: f64,
    pub pallet_square: [f64; 3],
    pub pallet_rectangle: [f64; 3],
    pub pallet_circle: [f64; 3],
    pub stack_mm: f64,
    pub max_stack: u32,
    /// Generic DO_1..DO_n / DI_1..DI_n signals besides the cell signals.
    pub generic_outputs: u32,
    pub generic_inputs: u32,
}

impl Default for WorkcellSettings {
    fn default() -> Self {
        Self {
            spawn_s: 0.5,
            recognize_s: 1.5,
            convey_s: 2.0,
            settle_s: 0.2,
            program_speed: 0.25,
            tool_down: [0.0, 0.0, 1.0, 0.0],
            location_b: [350.0, -200.0, 120.0],
            approach_mm: 80.0,
            pallet_square: [260.0, 220.0, 100.0],
            pallet_rectangle: [330.0, 220.0, 100.0],
            pallet_circle: [400.0, 220.0, 100.0],
            stack_mm: 20.0,
            max_stack: 5,
            generic_outputs: 16,
            generic_inputs: 16,
        }
    }
}
