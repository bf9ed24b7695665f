//! Operator view of the fleet, built only from what the base station hears.
//!
//! The tracker consumes run events and produces a new [`FleetView`] on every
//! STATUS the base station receives and on every sim-second clock tick. It
//! reads nothing else from the log, so ground truth cannot leak into a view.

use std::collections::BTreeMap;

use auvfleet_core::acoustics::packet::{PacketBody, StatusRecord};
use auvfleet_core::events::{Event, EventData};
use auvfleet_core::scenario::{Role, Scenario};
use auvfleet_core::sim::{EndReason, BASE_NAME};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Stopped,
    Failed,
}

impl From<EndReason> for RunStatus {
    fn from(r: EndReason) -> Self {
        match r {
            EndReason::Completed => RunStatus::Completed,
            EndReason::Stopped => RunStatus::Stopped,
            EndReason::Diagnostic => RunStatus::Failed,
        }
    }
}

/// Why a view was published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateCause {
    Status,
    Clock,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleView {
    pub id: String,
    pub beacon_id: u8,
    pub role: Role,
    pub contact: bool,
    /// Decoded record exactly as received.
    pub last_status: Option<StatusRecord>,
    /// Sim time of the last reception.
    pub last_contact: Option<f64>,
    /// Seconds since the last reception; `None` means never heard.
    pub age: Option<f64>,
    pub statuses_received: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BaseCounters {
    /// Frames of any kind the base station decoded.
    pub frames_received: u64,
    /// Command frames the base station put on the water.
    pub commands_sent: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetView {
    pub seq: u64,
    pub tick: u64,
    pub t: f64,
    pub cause: UpdateCause,
    pub status: RunStatus,
    pub vehicles: Vec<VehicleView>,
    pub base: BaseCounters,
}

impl FleetView {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("fleet views serialize")
    }
}

#[derive(Debug, Clone)]
pub struct FleetTracker {
    base_beacon: u8,
    vehicles: Vec<VehicleView>,
    by_beacon: BTreeMap<u8, usize>,
    base: BaseCounters,
    status: RunStatus,
    next_seq: u64,
    last: Option<FleetView>,
}

impl FleetTracker {
    pub fn new(scenario: &Scenario) -> Self {
        let vehicles: Vec<VehicleView> = scenario
            .agents
            .iter()
            .map(|a| VehicleView {
                id: a.id.clone(),
                beacon_id: a.beacon_id,
                role: a.role,
                contact: false,
                last_status: None,
                last_contact: None,
                age: None,
                statuses_received: 0,
            })
            .collect();
        let by_beacon = vehicles.iter().enumerate().map(|(i, v)| (v.beacon_id, i)).collect();
        Self {
            base_beacon: scenario.base_station.beacon_id,
            vehicles,
            by_beacon,
            base: BaseCounters::default(),
            status: RunStatus::Running,
            next_seq: 0,
            last: None,
        }
    }

    /// Most recent view, or the initial no-contact view before any update.
    pub fn snapshot(&self) -> FleetView {
        self.last.clone().unwrap_or_else(|| FleetView {
            seq: 0,
            tick: 0,
            t: 0.0,
            cause: UpdateCause::Clock,
            status: self.status,
            vehicles: self.vehicles.clone(),
            base: self.base,
        })
    }

    /// Feeds one event; returns the view it produced, if any.
    pub fn observe(&mut self, e: &Event) -> Option<FleetView> {
        let cause = match &e.data {
            EventData::Rx {
                receiver,
                packet: Some(p),
                ..
            } if *receiver == self.base_beacon => {
                self.base.frames_received += 1;
                let PacketBody::Status(rec) = p.body else {
                    return None;
                };
                let i = *self.by_beacon.get(&rec.id)?;
                let v = &mut self.vehicles[i];
                v.contact = true;
                v.last_status = Some(rec);
                v.last_contact = Some(e.t);
                v.statuses_received += 1;
                UpdateCause::Status
            }
            EventData::Tx { .. } if e.agent.as_deref() == Some(BASE_NAME) => {
                self.base.commands_sent += 1;
                return None;
            }
            EventData::Clock => UpdateCause::Clock,
            EventData::RunEnd { summary } => {
                self.status = summary.end.into();
                UpdateCause::End
            }
            _ => return None,
        };
        for v in &mut self.vehicles {
            v.age = v.last_contact.map(|c| e.t - c);
        }
        self.next_seq += 1;
        let view = FleetView {
            seq: self.next_seq,
            tick: e.tick,
            t: e.t,
            cause,
            status: self.status,
            vehicles: self.vehicles.clone(),
            base: self.base,
        };
        self.last = Some(view.clone());
        Some(view)
    }
}

/// Re-derives every fleet update from a persisted event log.
pub fn replay(scenario: &Scenario, events: &[Event]) -> Vec<FleetView> {
    let mut tracker = FleetTracker::new(scenario);
    events.iter().filter_map(|e| tracker.observe(e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use auvfleet_core::acoustics::packet::AcousticPacket;
    use auvfleet_core::scenario::load_scenario;

    fn scenario() -> Scenario {
        load_scenario(
            r#"
schema_version = 1
duration = 10.0
[[agents]]
id = "coug1"
beacon_id = 2
role = "follower"
[[agents]]
id = "coug2"
beacon_id = 3
role = "follower"
"#,
        )
        .unwrap()
    }

    fn status_rx(t: f64, id: u8, receiver: u8) -> Event {
        let rec = StatusRecord {
            id,
            bitmask: 0b1000,
            x: 1.5,
            y: -2.0,
            depth: 0.25,
            ..StatusRecord::default()
        };
        Event {
            tick: (t / 0.05) as u64,
            t,
            agent: Some("base".into()),
            data: EventData::Rx {
                tx: 0,
                src: id,
                receiver,
                tx_time: t - 1.0,
                arrival: t - 0.9,
                end: t,
                delay: 0.1,
                packet: Some(AcousticPacket {
                    src: id,
                    body: PacketBody::Status(rec),
                }),
            },
        }
    }

    fn clock(t: f64) -> Event {
        Event {
            tick: (t / 0.05) as u64,
            t,
            agent: None,
            data: EventData::Clock,
        }
    }

    #[test]
    fn no_contact_until_a_status_arrives() {
        let mut tr = FleetTracker::new(&scenario());
        let v = tr.observe(&clock(0.0)).unwrap();
        assert!(v.vehicles.iter().all(|v| !v.contact && v.age.is_none() && v.last_status.is_none()));
        assert_eq!(v.seq, 1);
    }

    #[test]
    fn status_passes_through_and_ages() {
        let mut tr = FleetTracker::new(&scenario());
        let e = status_rx(3.0, 2, 0);
        let v = tr.observe(&e).unwrap();
        let EventData::Rx { packet: Some(p), .. } = &e.data else { unreachable!() };
        let PacketBody::Status(rec) = p.body else { unreachable!() };
        assert_eq!(v.vehicles[0].last_status, Some(rec));
        assert_eq!(v.vehicles[0].age, Some(0.0));
        assert!(!v.vehicles[1].contact);
        let later = tr.observe(&clock(5.0)).unwrap();
        assert_eq!(later.vehicles[0].age, Some(2.0));
        assert_eq!(later.seq, v.seq + 1);
    }

    #[test]
    fn statuses_heard_by_vehicles_are_ignored() {
        let mut tr = FleetTracker::new(&scenario());
        assert!(tr.observe(&status_rx(3.0, 2, 3)).is_none());
        assert_eq!(tr.snapshot().vehicles[0].statuses_received, 0);
    }
}
