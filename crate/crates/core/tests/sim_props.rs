use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use auvfleet_core::acoustics::channel::LossReason;
use auvfleet_core::acoustics::packet::{AcousticPacket, PacketBody, PacketKind, MAX_FRAME_LEN};
use auvfleet_core::command::{OperatorCommand, ScriptedCommand, Target};
use auvfleet_core::events::{Event, EventData, VecSink};
use auvfleet_core::mission::MissionStatus;
use auvfleet_core::scenario::{load_scenario, Role, Scenario};
use auvfleet_core::sensors::{self, Payload, SensorKind};
use auvfleet_core::sim::{self, EndReason, RunSummary, Simulation};

fn field_setup() -> Scenario {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/field_setup.toml");
    load_scenario(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn run(s: Scenario) -> (Vec<Event>, RunSummary) {
    let mut sink = VecSink::default();
    let summary = sim::run(s, &mut sink);
    (sink.events, summary)
}

/// Field setup stretched to ten minutes, shared by the log-replay checks.
fn long_run() -> &'static (Scenario, Vec<Event>, RunSummary) {
    static RUN: OnceLock<(Scenario, Vec<Event>, RunSummary)> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut s = field_setup();
        s.duration = 600.0;
        s.log.sensors = false;
        let (events, summary) = run(s.clone());
        (s, events, summary)
    })
}

fn scripted(t: f64, command: OperatorCommand) -> ScriptedCommand {
    ScriptedCommand { t, command }
}

#[test]
fn zero_duration_keeps_initial_states() {
    let mut s = field_setup();
    s.duration = 0.0;
    let (events, summary) = run(s.clone());
    assert_eq!(summary.ticks, 0);
    assert_eq!(summary.end, EndReason::Completed);
    assert_eq!(summary.packets.channel.transmissions, 0);
    for (a, spec) in summary.agents.iter().zip(&s.agents) {
        assert_eq!(a.final_truth.pose, spec.initial_pose);
        assert_eq!(a.nodes, 0);
    }
    assert!(events.iter().all(|e| !matches!(e.data, EventData::Tx { .. })));
    assert!(matches!(events.last().unwrap().data, EventData::RunEnd { .. }));
}

#[test]
fn timestamps_never_decrease() {
    let (_, events, _) = long_run();
    for w in events.windows(2) {
        assert!(w[1].t >= w[0].t && w[1].tick >= w[0].tick, "{:?} then {:?}", w[0].data.kind(), w[1].data.kind());
    }
    let clocks = events.iter().filter(|e| matches!(e.data, EventData::Clock)).count();
    assert_eq!(clocks, 600);
}

#[test]
fn sensors_fire_on_their_period() {
    let mut s = field_setup();
    s.duration = 30.0;
    s.agents.truncate(2);
    s.agents[0].mission = None;
    let n = s.ticks();
    let (events, _) = run(s.clone());
    let mut counts: BTreeMap<(String, SensorKind), u64> = BTreeMap::new();
    for e in &events {
        if let EventData::Sensor { payload } = &e.data {
            let kind = match payload {
                Payload::Dvl { .. } => SensorKind::Dvl,
                Payload::Imu { .. } => SensorKind::Imu,
                Payload::Depth { .. } => SensorKind::Depth,
                Payload::Gps { .. } => SensorKind::Gps,
            };
            let spec = s.agent(e.agent.as_deref().unwrap()).unwrap();
            let period = sensors::period_ticks(spec.sensors.rate(kind), s.dt).unwrap();
            assert_eq!(e.tick % period, 0, "{kind:?} at tick {}", e.tick);
            *counts.entry((spec.id.clone(), kind)).or_default() += 1;
        }
    }
    for a in &s.agents {
        for kind in [SensorKind::Dvl, SensorKind::Imu, SensorKind::Depth] {
            let period = sensors::period_ticks(a.sensors.rate(kind), s.dt).unwrap();
            assert_eq!(counts[&(a.id.clone(), kind)], n.div_ceil(period), "{} {kind:?}", a.id);
        }
    }
    // The idle lead sits at the surface the whole time.
    let gps_period = sensors::period_ticks(s.agents[0].sensors.rate(SensorKind::Gps), s.dt).unwrap();
    assert_eq!(counts[&("lead".to_owned(), SensorKind::Gps)], n.div_ceil(gps_period));
}

#[test]
fn agent_order_does_not_change_anyones_noise() {
    let mut s = field_setup();
    s.duration = 20.0;
    s.agents.retain(|a| a.role == Role::Follower);
    let mut swapped = s.clone();
    swapped.agents.reverse();
    let per_agent = |events: Vec<Event>| {
        let mut out: BTreeMap<String, Vec<(u64, Payload)>> = BTreeMap::new();
        for e in events {
            if let EventData::Sensor { payload } = e.data {
                out.entry(e.agent.unwrap()).or_default().push((e.tick, payload));
            }
        }
        out
    };
    let a = per_agent(run(s).0);
    assert_eq!(a.len(), 2);
    assert_eq!(a, per_agent(run(swapped).0));
}

#[test]
fn every_frame_fits_the_budget() {
    let (_, events, summary) = long_run();
    for e in events {
        if let EventData::Tx { len, packet, bytes, .. } = &e.data {
            assert!(*len <= MAX_FRAME_LEN);
            assert_eq!(bytes.len(), 2 * len);
            if *packet == PacketKind::Status {
                assert_eq!(*len, MAX_FRAME_LEN);
            }
        }
    }
    assert!(summary.packets.max_frame_len <= MAX_FRAME_LEN);
}

#[test]
fn packet_counts_match_log_replay() {
    let (s, events, summary) = long_run();
    let beacons: BTreeSet<u8> = s.agents.iter().map(|a| a.beacon_id).chain([s.base_station.beacon_id]).collect();
    let mut frames: BTreeMap<u64, (Vec<u8>, f64)> = BTreeMap::new();
    let mut pending: BTreeSet<(u64, u8)> = BTreeSet::new();
    let mut by_kind: BTreeMap<PacketKind, u64> = BTreeMap::new();
    let (mut delivered, mut losses) = (0u64, BTreeMap::<LossReason, u64>::new());
    for e in events {
        match &e.data {
            EventData::Tx { tx, src, packet, bytes, end, .. } => {
                *by_kind.entry(*packet).or_default() += 1;
                frames.insert(*tx, (hex::decode(bytes).unwrap(), *end));
                for &b in beacons.iter().filter(|&&b| b != *src) {
                    assert!(pending.insert((*tx, b)));
                }
            }
            EventData::Rx { tx, receiver, packet, .. } => {
                assert!(pending.remove(&(*tx, *receiver)), "rx without tx");
                assert_eq!(*packet, AcousticPacket::decode(&frames[tx].0).ok());
                delivered += 1;
            }
            EventData::Loss { tx, receiver, reason, .. } => {
                assert!(pending.remove(&(*tx, *receiver)), "loss without tx");
                *losses.entry(*reason).or_default() += 1;
            }
            _ => {}
        }
    }
    // Only frames still propagating at the end may be unresolved.
    let t_end = summary.t_end;
    for (tx, _) in &pending {
        assert!(frames[tx].1 + 1.0 > t_end, "tx {tx} never resolved");
    }
    let c = summary.packets.channel;
    assert_eq!(c.transmissions, frames.len() as u64);
    assert_eq!(c.delivered, delivered);
    assert_eq!(c.lost_random, losses.get(&LossReason::Random).copied().unwrap_or(0));
    assert_eq!(c.lost_collision, losses.get(&LossReason::Collision).copied().unwrap_or(0));
    assert_eq!(c.lost_half_duplex, losses.get(&LossReason::HalfDuplex).copied().unwrap_or(0));
    assert_eq!(c.lost_range, losses.get(&LossReason::Range).copied().unwrap_or(0));
    assert_eq!(summary.packets.transmitted_by_kind, by_kind);
    assert!(delivered > 100);
}

#[test]
fn status_carries_the_latest_estimate() {
    let (s, events, _) = long_run();
    let mut latest: BTreeMap<&str, auvfleet_core::geometry::Pose6> = s.agents.iter().map(|a| (a.id.as_str(), a.initial_pose)).collect();
    let mut checked = 0;
    for e in events {
        match &e.data {
            EventData::Estimate { pose, .. } => {
                latest.insert(e.agent.as_deref().unwrap(), *pose);
            }
            EventData::Tx { packet: PacketKind::Status, bytes, .. } => {
                let p = AcousticPacket::decode(&hex::decode(bytes).unwrap()).unwrap();
                let PacketBody::Status(r) = p.body else { unreachable!() };
                let est = latest[e.agent.as_deref().unwrap()];
                let f = |v: f64| v as f32 as f64;
                assert_eq!([r.x, r.y, r.z, r.roll, r.pitch, r.yaw], [f(est.x), f(est.y), f(est.z), f(est.roll), f(est.pitch), f(est.yaw)]);
                checked += 1;
            }
            _ => {}
        }
    }
    assert!(checked > 50);
}

#[test]
fn lead_polls_round_robin() {
    let (s, events, summary) = long_run();
    let followers: Vec<u8> = s.agents.iter().filter(|a| a.role == Role::Follower).map(|a| a.beacon_id).collect();
    let polls: Vec<u8> = events
        .iter()
        .filter_map(|e| match e.data {
            EventData::Tx { packet: PacketKind::Poll, dst, .. } => Some(dst),
            _ => None,
        })
        .collect();
    assert!(polls.len() > 20);
    for (i, d) in polls.iter().enumerate() {
        assert_eq!(*d, followers[i % followers.len()], "poll {i}");
    }
    assert!(summary.lead.is_some());
}

#[test]
fn abort_all_reaches_every_follower_after_one_frame() {
    let mut s = field_setup();
    s.duration = 90.0;
    s.channel.loss_probability = 0.0;
    s.commands = vec![scripted(40.0, OperatorCommand::Abort { target: Target::All })];
    let (events, summary) = run(s.clone());
    let abort_tx = events
        .iter()
        .find(|e| matches!(e.data, EventData::Tx { packet: PacketKind::CmdAbort, .. }))
        .expect("abort transmitted");
    let t0 = abort_tx.t;
    let base = nalgebra::Vector3::from(s.base_station.position);
    for a in s.agents.iter().filter(|a| a.mission.is_some()) {
        let pos = events
            .iter()
            .find_map(|e| match &e.data {
                EventData::Truth(v) if e.tick == abort_tx.tick && e.agent.as_deref() == Some(a.id.as_str()) => Some(v.pose),
                _ => None,
            })
            .unwrap();
        let d = (nalgebra::Vector3::new(pos.x, pos.y, pos.z) - base).norm();
        let heard = t0 + d / s.channel.sound_speed + s.channel.tx_duration;
        let aborted = events
            .iter()
            .find(|e| e.agent.as_deref() == Some(a.id.as_str()) && matches!(e.data, EventData::Mission { status: MissionStatus::Aborted, .. }))
            .unwrap_or_else(|| panic!("{} never aborted", a.id));
        assert!(aborted.t >= heard - 1e-9 && aborted.t <= heard + s.dt + 1e-9, "{}: aborted at {} for frame complete at {heard}", a.id, aborted.t);
    }
    assert!(summary.agents.iter().all(|a| a.aborted));
}

#[test]
fn abort_under_total_loss_changes_nothing() {
    let mut s = field_setup();
    s.duration = 90.0;
    s.channel.loss_probability = 1.0;
    let mut sim = Simulation::new(s);
    let mut sink = VecSink::default();
    for _ in 0..600 {
        sim.step(&mut sink);
    }
    assert_eq!(sim.submit(OperatorCommand::Abort { target: Target::All }), Ok(600));
    let summary = sim.run_to_end(&mut sink);
    assert_eq!(summary.commands_injected, 1);
    assert!(summary.packets.transmitted_by_kind.get(&PacketKind::CmdAbort).copied().unwrap_or(0) >= 1);
    assert_eq!(summary.packets.channel.delivered, 0);
    assert!(summary.agents.iter().all(|a| !a.aborted && a.mission.as_ref().unwrap().status != MissionStatus::Aborted));
}

#[test]
fn waypoint_goes_to_its_addressee_only() {
    let mut s = field_setup();
    s.duration = 60.0;
    s.channel.loss_probability = 0.0;
    s.commands = vec![scripted(
        20.0,
        OperatorCommand::Waypoint {
            target: Target::Vehicle("coug1".into()),
            x: 0.0,
            y: 50.0,
            depth: 1.0,
            speed: 1.0,
        },
    )];
    let (_, summary) = run(s.clone());
    let count = |id: &str| summary.agent(id).unwrap().mission.as_ref().unwrap().waypoints;
    assert_eq!(count("coug1"), s.agent("coug1").unwrap().mission.as_ref().unwrap().waypoints.len() + 1);
    assert_eq!(count("coug2"), s.agent("coug2").unwrap().mission.as_ref().unwrap().waypoints.len());
    assert_eq!(count("lead"), 1);
}

#[test]
fn stop_ends_the_run_early() {
    let mut s = field_setup();
    s.commands = vec![scripted(5.0, OperatorCommand::Stop)];
    let (events, summary) = run(s);
    assert_eq!(summary.end, EndReason::Stopped);
    assert_eq!(summary.ticks, 100);
    assert!(matches!(events.last().unwrap().data, EventData::RunEnd { .. }));
}
