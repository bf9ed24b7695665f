//! Nearest-neighbor association of queued measurements to pose nodes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::sensors::{Measurement, SensorKind};

/// Counters over every measurement handed to the queue. At all times
/// `received == assigned + discarded + pending`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssociationStats {
    pub received: u64,
    pub assigned: u64,
    pub discarded: u64,
    pub pending: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub measurement: Measurement,
    pub node: usize,
    /// Measurement time minus node time (s).
    pub offset: f64,
}

/// Node timestamps a queue is matched against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeWindow {
    pub previous: Option<(usize, f64)>,
    pub current: (usize, f64),
}

#[derive(Debug, Clone)]
pub struct MeasurementQueue {
    tolerance: f64,
    queues: [VecDeque<Measurement>; 3],
    stats: AssociationStats,
}

fn slot(kind: SensorKind) -> Option<usize> {
    match kind {
        SensorKind::Imu => Some(0),
        SensorKind::Depth => Some(1),
        SensorKind::Gps => Some(2),
        SensorKind::Dvl => None,
    }
}

impl MeasurementQueue {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            queues: Default::default(),
            stats: AssociationStats::default(),
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn stats(&self) -> AssociationStats {
        self.stats
    }

    pub fn pending(&self, kind: SensorKind) -> usize {
        slot(kind).map_or(0, |s| self.queues[s].len())
    }

    /// Queues a unary measurement. DVL samples create nodes and are not queued.
    pub fn push(&mut self, m: Measurement) {
        let Some(s) = slot(m.kind()) else {
            return;
        };
        self.stats.received += 1;
        self.stats.pending += 1;
        self.queues[s].push_back(m);
    }

    /// Counts a measurement that is dropped without ever being queued.
    pub fn reject(&mut self) {
        self.stats.received += 1;
        self.stats.discarded += 1;
    }

    /// Turns an earlier assignment into a discard, e.g. when a closer
    /// measurement of the same kind replaces it on its node.
    pub fn demote(&mut self) {
        self.stats.assigned -= 1;
        self.stats.discarded += 1;
    }

    /// Matches every queued measurement against the current and previous
    /// node. Each is assigned to the nearer one (ties go to the newer node)
    /// when within tolerance; otherwise it stays queued if it is newer than
    /// the current node and is discarded if not.
    pub fn associate(&mut self, window: NodeWindow) -> Vec<Assignment> {
        let mut out = Vec::new();
        let (cur_idx, cur_t) = window.current;
        for q in &mut self.queues {
            let mut keep = VecDeque::with_capacity(q.len());
            for m in q.drain(..) {
                let mut best = (cur_idx, m.t - cur_t);
                if let Some((pi, pt)) = window.previous {
                    let off = m.t - pt;
                    if off.abs() < best.1.abs() {
                        best = (pi, off);
                    }
                }
                if best.1.abs() <= self.tolerance {
                    self.stats.pending -= 1;
                    self.stats.assigned += 1;
                    out.push(Assignment {
                        measurement: m,
                        node: best.0,
                        offset: best.1,
                    });
                } else if m.t > cur_t {
                    keep.push_back(m);
                } else {
                    self.stats.pending -= 1;
                    self.stats.discarded += 1;
                }
            }
            *q = keep;
        }
        out
    }
}
