//! Medium access: the lead's round-robin poller, follower responders and
//! the base station's command uplink.
//!
//! Only the lead transmits unprompted. A follower speaks once, right after
//! the poll addressed to it ends, so by the triangle inequality its status
//! cannot overlap the poll anywhere. The base station speaks right after it
//! hears a status, which leaves the rest of the poll slot free, and the lead
//! holds its next poll for one spacing interval after hearing the base.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::packet::{AcousticPacket, PacketBody, WaypointCommand};

const EPS: f64 = 1e-9;

/// Enforces a minimum spacing between one beacon's transmissions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxGate {
    pub min_interval: f64,
    pub last: Option<f64>,
}

impl TxGate {
    pub fn new(min_interval: f64) -> Self {
        Self { min_interval, last: None }
    }

    pub fn ready(&self, t: f64) -> bool {
        self.last.is_none_or(|l| t - l >= self.min_interval - EPS)
    }

    pub fn mark(&mut self, t: f64) {
        self.last = Some(t);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "slot", rename_all = "snake_case")]
pub enum LeadSlot {
    Poll { target: u8 },
    /// The lead's own status report.
    SelfStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum LeadState {
    Idle,
    Waiting { target: u8, since: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LeadStats {
    /// `(follower, polls sent)` in polling order.
    pub polls: Vec<(u8, u64)>,
    pub answered: u64,
    pub timeouts: u64,
    pub self_reports: u64,
}

#[derive(Debug, Clone)]
pub struct LeadPoller {
    followers: Vec<u8>,
    base: Option<u8>,
    self_report: bool,
    next: usize,
    state: LeadState,
    timeout: f64,
    defer_until: f64,
    stats: LeadStats,
}

impl LeadPoller {
    pub fn new(followers: Vec<u8>, base: Option<u8>, timeout: f64, self_report: bool) -> Self {
        let stats = LeadStats {
            polls: followers.iter().map(|&f| (f, 0)).collect(),
            ..LeadStats::default()
        };
        Self {
            followers,
            base,
            self_report,
            next: 0,
            state: LeadState::Idle,
            timeout,
            defer_until: f64::NEG_INFINITY,
            stats,
        }
    }

    pub fn state(&self) -> LeadState {
        self.state
    }

    pub fn stats(&self) -> &LeadStats {
        &self.stats
    }

    /// Feeds a frame the lead received at `t`.
    pub fn observe(&mut self, t: f64, pkt: &AcousticPacket, gate: &TxGate) {
        if let (LeadState::Waiting { target, .. }, PacketBody::Status(_)) = (self.state, &pkt.body) {
            if pkt.src == target {
                self.state = LeadState::Idle;
                self.stats.answered += 1;
            }
        }
        if Some(pkt.src) == self.base {
            self.defer_until = self.defer_until.max(t + gate.min_interval);
        }
    }

    /// Decides whether the lead transmits at `t`; marks `gate` when it does.
    pub fn step(&mut self, t: f64, gate: &mut TxGate) -> Option<LeadSlot> {
        if let LeadState::Waiting { since, .. } = self.state {
            if t - since >= self.timeout - EPS {
                self.state = LeadState::Idle;
                self.stats.timeouts += 1;
            }
        }
        if self.state != LeadState::Idle || !gate.ready(t) || t < self.defer_until - EPS {
            return None;
        }
        let slots = self.followers.len() + usize::from(self.self_report);
        if slots == 0 {
            return None;
        }
        let k = self.next % slots;
        self.next = (k + 1) % slots;
        gate.mark(t);
        if k < self.followers.len() {
            let target = self.followers[k];
            self.state = LeadState::Waiting { target, since: t };
            self.stats.polls[k].1 += 1;
            Some(LeadSlot::Poll { target })
        } else {
            self.stats.self_reports += 1;
            Some(LeadSlot::SelfStatus)
        }
    }
}

/// What a vehicle should do about a frame it received.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum VehicleAction {
    SendStatus,
    Abort,
    AddWaypoint(WaypointCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResponderStats {
    pub statuses: u64,
    /// Polls that could not be answered without breaking the spacing rule.
    pub skipped: u64,
    pub aborts: u64,
    pub waypoints: u64,
    pub malformed: u64,
}

/// Per-vehicle handling of addressed frames and the pending status reply.
#[derive(Debug, Clone)]
pub struct Responder {
    id: u8,
    pending_status: bool,
    pub abort_ack: bool,
    pub waypoint_ack: bool,
    stats: ResponderStats,
}

impl Responder {
    pub fn new(id: u8) -> Self {
        Self {
            id,
            pending_status: false,
            abort_ack: false,
            waypoint_ack: false,
            stats: ResponderStats::default(),
        }
    }

    pub fn stats(&self) -> ResponderStats {
        self.stats
    }

    /// Decodes and handles one received frame.
    pub fn on_frame(&mut self, frame: &[u8]) -> Option<VehicleAction> {
        match AcousticPacket::decode(frame) {
            Ok(pkt) => self.handle(&pkt),
            Err(_) => {
                self.stats.malformed += 1;
                None
            }
        }
    }

    pub fn handle(&mut self, pkt: &AcousticPacket) -> Option<VehicleAction> {
        if !pkt.is_for(self.id) || pkt.src == self.id {
            return None;
        }
        match pkt.body {
            PacketBody::Poll { dst } if dst == self.id => {
                self.pending_status = true;
                Some(VehicleAction::SendStatus)
            }
            PacketBody::CmdAbort { .. } => {
                self.abort_ack = true;
                self.stats.aborts += 1;
                Some(VehicleAction::Abort)
            }
            PacketBody::CmdWaypoint(w) => {
                self.waypoint_ack = true;
                self.stats.waypoints += 1;
                Some(VehicleAction::AddWaypoint(w))
            }
            _ => None,
        }
    }

    /// Whether a pending status reply goes out at `t`. A reply that would
    /// violate the spacing rule is dropped.
    pub fn take_reply(&mut self, t: f64, gate: &mut TxGate) -> bool {
        if !std::mem::take(&mut self.pending_status) {
            return false;
        }
        if gate.ready(t) {
            gate.mark(t);
            self.stats.statuses += 1;
            true
        } else {
            self.stats.skipped += 1;
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueuedCommand {
    pub body: PacketBody,
    pub injected_tick: u64,
}

/// Static beacon relaying operator commands into the water.
#[derive(Debug, Clone)]
pub struct BaseStation {
    pub id: u8,
    has_lead: bool,
    silence: f64,
    queue: VecDeque<QueuedCommand>,
    last_status: Option<f64>,
    heard_status: bool,
}

impl BaseStation {
    /// `silence`: with a lead present, transmit anyway once no status has
    /// been heard for this long.
    pub fn new(id: u8, has_lead: bool, silence: f64) -> Self {
        Self {
            id,
            has_lead,
            silence,
            queue: VecDeque::new(),
            last_status: None,
            heard_status: false,
        }
    }

    pub fn enqueue(&mut self, cmd: QueuedCommand) {
        self.queue.push_back(cmd);
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn observe(&mut self, t: f64, pkt: &AcousticPacket) {
        if matches!(pkt.body, PacketBody::Status(_)) {
            self.heard_status = true;
            self.last_status = Some(t);
        }
    }

    /// Next command to put on the water at `t`, if the slot is right.
    pub fn step(&mut self, t: f64, gate: &mut TxGate) -> Option<QueuedCommand> {
        let heard = std::mem::take(&mut self.heard_status);
        if self.queue.is_empty() || !gate.ready(t) {
            return None;
        }
        let quiet_for = t - self.last_status.unwrap_or(0.0);
        if self.has_lead && !heard && quiet_for < self.silence - EPS {
            return None;
        }
        gate.mark(t);
        self.queue.pop_front()
    }
}
