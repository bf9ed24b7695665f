//! Run event records and sinks.
//!
//! Every record serializes to one JSON object with `tick`, `t`, `agent`,
//! `kind` and the kind's payload fields. Events are emitted in pipeline
//! order, so `t` never decreases along a log.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::acoustics::channel::LossReason;
use crate::acoustics::packet::{AcousticPacket, PacketKind};
use crate::command::OperatorCommand;
use crate::control::ControlTrace;
use crate::dynamics::VehicleState;
use crate::estimator::PoseNode;
use crate::geometry::Pose6;
use crate::mission::MissionStatus;
use crate::sensors::Payload;
use crate::sim::RunSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub t: f64,
    pub agent: Option<String>,
    #[serde(flatten)]
    pub data: EventData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventData {
    RunStart {
        name: String,
        seed: u64,
        dt: f64,
        duration: f64,
        agents: Vec<String>,
    },
    Sensor {
        #[serde(flatten)]
        payload: Payload,
    },
    Estimate {
        node: usize,
        node_t: f64,
        pose: Pose6,
        relinearized: usize,
        degraded: bool,
    },
    Control(ControlTrace),
    Truth(VehicleState),
    WaypointReached {
        index: usize,
        x: f64,
        y: f64,
        /// Horizontal distance from the estimate that passed the test.
        distance: f64,
    },
    Mission {
        status: MissionStatus,
        index: usize,
    },
    Tx {
        tx: u64,
        src: u8,
        dst: u8,
        packet: PacketKind,
        len: usize,
        bytes: String,
        /// Sim time the last bit leaves the transducer.
        end: f64,
    },
    Rx {
        tx: u64,
        src: u8,
        receiver: u8,
        tx_time: f64,
        arrival: f64,
        end: f64,
        /// Tick-quantized arrival minus transmit time.
        delay: f64,
        packet: Option<AcousticPacket>,
    },
    Loss {
        tx: u64,
        src: u8,
        receiver: u8,
        reason: LossReason,
    },
    Aoa {
        source: u8,
        receiver: u8,
        azimuth: f64,
        elevation: f64,
    },
    CommandInjected {
        command: OperatorCommand,
    },
    Clock,
    Diagnostic {
        message: String,
    },
    Trajectory {
        nodes: Vec<PoseNode>,
    },
    RunEnd {
        summary: Box<RunSummary>,
    },
}

impl EventData {
    pub fn kind(&self) -> &'static str {
        match self {
            EventData::RunStart { .. } => "run_start",
            EventData::Sensor { .. } => "sensor",
            EventData::Estimate { .. } => "estimate",
            EventData::Control(_) => "control",
            EventData::Truth(_) => "truth",
            EventData::WaypointReached { .. } => "waypoint_reached",
            EventData::Mission { .. } => "mission",
            EventData::Tx { .. } => "tx",
            EventData::Rx { .. } => "rx",
            EventData::Loss { .. } => "loss",
            EventData::Aoa { .. } => "aoa",
            EventData::CommandInjected { .. } => "command_injected",
            EventData::Clock => "clock",
            EventData::Diagnostic { .. } => "diagnostic",
            EventData::Trajectory { .. } => "trajectory",
            EventData::RunEnd { .. } => "run_end",
        }
    }

    /// Whether the record carries simulator ground truth.
    pub fn is_truth(&self) -> bool {
        matches!(self, EventData::Truth(_) | EventData::RunEnd { .. })
    }
}

impl Event {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

/// Consumer of run events.
pub trait EventSink {
    fn emit(&mut self, event: &Event);
}

impl<F: FnMut(&Event)> EventSink for F {
    fn emit(&mut self, event: &Event) {
        self(event)
    }
}

/// Keeps every event in memory.
#[derive(Debug, Default, Clone)]
pub struct VecSink {
    pub events: Vec<Event>,
}

impl EventSink for VecSink {
    fn emit(&mut self, event: &Event) {
        self.events.push(event.clone());
    }
}

/// Writes one JSON line per event. Write errors are remembered and reported
/// by [`NdjsonSink::finish`] rather than interrupting the run.
pub struct NdjsonSink<W: Write> {
    out: W,
    flush_each: bool,
    error: Option<io::Error>,
}

impl<W: Write> NdjsonSink<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            flush_each: false,
            error: None,
        }
    }

    /// Flushes after every record so a killed process leaves a whole-line prefix.
    pub fn flushing(out: W) -> Self {
        Self {
            out,
            flush_each: true,
            error: None,
        }
    }

    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> EventSink for NdjsonSink<W> {
    fn emit(&mut self, event: &Event) {
        if self.error.is_some() {
            return;
        }
        let mut line = event.to_json();
        line.push('\n');
        let res = self.out.write_all(line.as_bytes()).and_then(|_| {
            if self.flush_each {
                self.out.flush()
            } else {
                Ok(())
            }
        });
        if let Err(e) = res {
            self.error = Some(e);
        }
    }
}

/// Forwards each event to several sinks in order.
pub struct FanOut<'a> {
    sinks: Vec<&'a mut dyn EventSink>,
}

impl<'a> FanOut<'a> {
    pub fn new(sinks: Vec<&'a mut dyn EventSink>) -> Self {
        Self { sinks }
    }
}

impl EventSink for FanOut<'_> {
    fn emit(&mut self, event: &Event) {
        for s in &mut self.sinks {
            s.emit(event);
        }
    }
}

/// Parses an NDJSON log, stopping at the first incomplete or invalid line.
pub fn read_log(text: &str) -> Vec<Event> {
    text.lines().map_while(|l| serde_json::from_str(l).ok()).collect()
}
