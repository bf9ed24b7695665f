//! Fixed-step simulation loop.
//!
//! Each step at `t = tick·dt` runs, in order: queued operator commands,
//! sensor sampling, estimator updates, mission and control, dynamics, channel
//! deliveries that completed by `t`, and protocol transmissions at `t`.
//! Every stage reads state written by earlier stages only.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::channel::{Beacon, Channel, ChannelStats, Reception};
use crate::acoustics::packet::{bits, AcousticPacket, PacketBody, PacketKind, StatusRecord, WaypointCommand, BROADCAST, MAX_STATUS_DEPTH};
use crate::acoustics::protocol::{BaseStation, LeadPoller, LeadSlot, LeadStats, QueuedCommand, Responder, ResponderStats, TxGate, VehicleAction};
use crate::acoustics::aoa::compute_aoa;
use crate::command::{OperatorCommand, Target};
use crate::control::{Autopilot, Gains, Measured, Setpoint};
use crate::dynamics::{step_dynamics, ActuatorCommand, VehicleState};
use crate::estimator::{AssociationStats, Estimator};
use crate::events::{Event, EventData, EventSink};
use crate::geometry::Pose6;
use crate::mission::{self, MissionPlan, MissionState, MissionStatus, Waypoint};
use crate::rng::RngStream;
use crate::scenario::{AgentSpec, Role, Scenario};
use crate::sensors::{self, Measurement, Payload, SensorKind};

/// Name used for the base station in event records.
pub const BASE_NAME: &str = "base";

/// GPS fix bit stays set this long after the last fix (s).
const GPS_FIX_HOLD: f64 = 2.0;
/// DVL valid bit stays set this long after the last sample (s).
const DVL_VALID_HOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Completed,
    Stopped,
    Diagnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachedWaypoint {
    pub index: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Horizontal distance from the estimate when the test passed.
    pub estimate_distance: f64,
    /// Horizontal distance from ground truth at the same instant.
    pub truth_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub status: MissionStatus,
    pub index: usize,
    pub waypoints: usize,
    pub reached: Vec<ReachedWaypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub id: String,
    pub beacon_id: u8,
    pub role: Role,
    pub final_truth: VehicleState,
    pub final_estimate: Option<Pose6>,
    pub nodes: usize,
    pub estimator_degraded: bool,
    pub association: AssociationStats,
    pub mission: Option<MissionSummary>,
    pub aborted: bool,
    pub responder: ResponderStats,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PacketSummary {
    pub channel: ChannelStats,
    pub transmitted_by_kind: BTreeMap<PacketKind, u64>,
    pub max_frame_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub ticks: u64,
    pub t_end: f64,
    pub end: EndReason,
    pub diagnostic: Option<String>,
    pub agents: Vec<AgentSummary>,
    pub packets: PacketSummary,
    pub lead: Option<LeadStats>,
    pub commands_injected: u64,
}

impl RunSummary {
    pub fn agent(&self, id: &str) -> Option<&AgentSummary> {
        self.agents.iter().find(|a| a.id == id)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubmitError {
    #[error("run has finished")]
    Finished,
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
    #[error("malformed command: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Default)]
struct Held {
    dvl: Option<[f64; 3]>,
    imu: Option<[f64; 3]>,
    depth: Option<f64>,
    last_dvl: Option<f64>,
    last_gps: Option<f64>,
}

struct AgentRt {
    spec: AgentSpec,
    gains: Gains,
    truth: VehicleState,
    estimator: Estimator,
    autopilot: Autopilot,
    plan: Option<MissionPlan>,
    mission: Option<MissionState>,
    aborted: bool,
    sensor_rng: [RngStream; 4],
    periods: [u64; 4],
    aoa_rng: RngStream,
    held: Held,
    gate: TxGate,
    responder: Responder,
    poller: Option<LeadPoller>,
    reached: Vec<ReachedWaypoint>,
    autopilot_command: Option<ActuatorCommand>,
}

impl AgentRt {
    fn estimate(&self) -> Pose6 {
        self.estimator.current_estimate().map_or(self.spec.initial_pose, |(p, _)| p)
    }

    fn status_record(&self, t: f64) -> StatusRecord {
        let est = self.estimate();
        let mut mask = 0u8;
        let h = &self.spec.health;
        if h.leak {
            mask |= bits::LEAK;
        }
        if h.low_battery {
            mask |= bits::LOW_BATTERY;
        }
        if self.held.last_gps.is_some_and(|g| t - g <= GPS_FIX_HOLD) {
            mask |= bits::GPS_FIX;
        }
        if self.held.last_dvl.is_some_and(|d| t - d <= DVL_VALID_HOLD) {
            mask |= bits::DVL_VALID;
        }
        if self.mission.is_some_and(|m| m.status == MissionStatus::Running) {
            mask |= bits::MISSION_RUNNING;
        }
        if self.responder.abort_ack {
            mask |= bits::ABORT_ACK;
        }
        if self.responder.waypoint_ack {
            mask |= bits::WAYPOINT_ACK;
        }
        let depth = self.held.depth.unwrap_or(est.z);
        StatusRecord {
            id: self.spec.beacon_id,
            bitmask: mask,
            x: est.x,
            y: est.y,
            z: est.z,
            roll: est.roll,
            pitch: est.pitch,
            yaw: est.yaw,
            depth: if depth.is_finite() { depth.clamp(0.0, MAX_STATUS_DEPTH) } else { 0.0 },
        }
    }
}

struct BaseRt {
    station: BaseStation,
    gate: TxGate,
    position: Vector3<f64>,
    aoa_rng: RngStream,
}

pub struct Simulation {
    scenario: Scenario,
    tick: u64,
    n_ticks: u64,
    agents: Vec<AgentRt>,
    base: BaseRt,
    channel: Channel,
    inbox: VecDeque<OperatorCommand>,
    scripted: VecDeque<crate::command::ScriptedCommand>,
    stop_requested: bool,
    finished: Option<RunSummary>,
    diagnostic: Option<String>,
    commands_injected: u64,
    tx_by_kind: BTreeMap<PacketKind, u64>,
    max_frame_len: usize,
}

fn sensor_index(kind: SensorKind) -> usize {
    match kind {
        SensorKind::Dvl => 0,
        SensorKind::Imu => 1,
        SensorKind::Depth => 2,
        SensorKind::Gps => 3,
    }
}

impl Simulation {
    /// Builds a run from a validated scenario.
    pub fn new(scenario: Scenario) -> Self {
        let seed = scenario.seed;
        let followers: Vec<u8> = scenario.agents.iter().filter(|a| a.role == Role::Follower).map(|a| a.beacon_id).collect();
        let has_lead = scenario.lead().is_some();
        let agents = scenario
            .agents
            .iter()
            .map(|spec| {
                let sensor_rng = SensorKind::ALL.map(|k| RngStream::new(seed, format!("sensor/{}/{}", spec.id, k.label())));
                let periods = SensorKind::ALL.map(|k| sensors::period_ticks(spec.sensors.rate(k), scenario.dt).unwrap_or(1));
                AgentRt {
                    gains: spec.gains(scenario.dt),
                    truth: VehicleState::at_rest(spec.initial_pose),
                    estimator: Estimator::new(&spec.estimator, &spec.sensors, spec.initial_pose),
                    autopilot: Autopilot::new(),
                    plan: spec.mission.clone(),
                    mission: spec.mission.as_ref().map(|_| MissionState::start()),
                    aborted: false,
                    sensor_rng,
                    periods,
                    aoa_rng: RngStream::new(seed, format!("aoa/{}", spec.id)),
                    held: Held::default(),
                    gate: TxGate::new(scenario.channel.min_tx_interval),
                    responder: Responder::new(spec.beacon_id),
                    poller: (spec.role == Role::Lead).then(|| {
                        LeadPoller::new(
                            followers.clone(),
                            Some(scenario.base_station.beacon_id),
                            scenario.channel.poll_timeout,
                            scenario.protocol.lead_self_report,
                        )
                    }),
                    reached: Vec::new(),
                    autopilot_command: None,
                    spec: spec.clone(),
                }
            })
            .collect();
        let base = BaseRt {
            station: BaseStation::new(scenario.base_station.beacon_id, has_lead, scenario.protocol.base_silence_fallback),
            gate: TxGate::new(scenario.channel.min_tx_interval),
            position: Vector3::from(scenario.base_station.position),
            aoa_rng: RngStream::new(seed, format!("aoa/{BASE_NAME}")),
        };
        let mut scripted: Vec<_> = scenario.commands.clone();
        scripted.sort_by(|a, b| a.t.total_cmp(&b.t));
        Self {
            n_ticks: scenario.ticks(),
            channel: Channel::new(scenario.channel.clone(), seed),
            agents,
            base,
            inbox: VecDeque::new(),
            scripted: scripted.into(),
            stop_requested: false,
            finished: None,
            diagnostic: None,
            commands_injected: 0,
            tx_by_kind: BTreeMap::new(),
            max_frame_len: 0,
            tick: 0,
            scenario,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn t(&self) -> f64 {
        self.tick as f64 * self.scenario.dt
    }

    pub fn total_ticks(&self) -> u64 {
        self.n_ticks
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    pub fn summary(&self) -> Option<&RunSummary> {
        self.finished.as_ref()
    }

    /// Queues an operator command for the next step. Returns the tick at
    /// which it will be injected. Acceptance says nothing about delivery.
    pub fn submit(&mut self, cmd: OperatorCommand) -> Result<u64, SubmitError> {
        if self.is_finished() {
            return Err(SubmitError::Finished);
        }
        cmd.validate().map_err(SubmitError::Malformed)?;
        if let Some(Target::Vehicle(id)) = cmd.target() {
            if self.scenario.agent(id).is_none() {
                return Err(SubmitError::UnknownTarget(id.clone()));
            }
        }
        self.inbox.push_back(cmd);
        Ok(self.tick)
    }

    fn emit(&self, sink: &mut dyn EventSink, agent: Option<&str>, data: EventData) {
        sink.emit(&Event {
            tick: self.tick,
            t: self.t(),
            agent: agent.map(str::to_owned),
            data,
        });
    }

    fn inject(&mut self, cmd: OperatorCommand, sink: &mut dyn EventSink) {
        self.commands_injected += 1;
        self.emit(sink, None, EventData::CommandInjected { command: cmd.clone() });
        let beacon = |t: &Target| match t {
            Target::All => BROADCAST,
            Target::Vehicle(id) => self.scenario.agent(id).map_or(BROADCAST, |a| a.beacon_id),
        };
        let body = match &cmd {
            OperatorCommand::Abort { target } => PacketBody::CmdAbort { dst: beacon(target) },
            OperatorCommand::Waypoint { target, x, y, depth, speed } => PacketBody::CmdWaypoint(WaypointCommand {
                target: beacon(target),
                x: *x,
                y: *y,
                depth: *depth,
                speed: *speed,
            }),
            OperatorCommand::Stop => {
                self.stop_requested = true;
                return;
            }
            OperatorCommand::Start => return,
        };
        self.base.station.enqueue(QueuedCommand {
            body,
            injected_tick: self.tick,
        });
    }

    /// Advances one step. Returns `false` once the run has finished.
    pub fn step(&mut self, sink: &mut dyn EventSink) -> bool {
        if self.is_finished() {
            return false;
        }
        let dt = self.scenario.dt;
        let t = self.t();
        if self.tick == 0 {
            self.emit(
                sink,
                None,
                EventData::RunStart {
                    name: self.scenario.name.clone(),
                    seed: self.scenario.seed,
                    dt,
                    duration: self.scenario.duration,
                    agents: self.agents.iter().map(|a| a.spec.id.clone()).collect(),
                },
            );
        }
        while let Some(cmd) = self.inbox.pop_front() {
            self.inject(cmd, sink);
        }
        while self.scripted.front().is_some_and(|c| c.t <= t + 1e-9) {
            let c = self.scripted.pop_front().expect("front checked");
            self.inject(c.command, sink);
        }
        if self.stop_requested {
            self.finish(EndReason::Stopped, sink);
            return false;
        }
        if self.tick >= self.n_ticks {
            self.finish(EndReason::Completed, sink);
            return false;
        }
        let prev_second = if self.tick == 0 { -1.0 } else { ((self.tick - 1) as f64 * dt).floor() };
        if t.floor() > prev_second {
            self.emit(sink, None, EventData::Clock);
        }

        let poses: Vec<Pose6> = self.agents.iter().map(|a| a.truth.pose).collect();
        self.stage_truth(sink);
        let batches = self.stage_sensors(sink);
        if let Err(msg) = self.stage_estimator(batches, sink) {
            return self.fail(msg, sink);
        }
        self.stage_control(sink);
        for a in &mut self.agents {
            let cmd = a.autopilot_command.take().unwrap_or_else(ActuatorCommand::idle);
            a.truth = step_dynamics(&a.truth, &cmd, &a.spec.plant, dt);
        }
        if let Some(a) = self.agents.iter().find(|a| !a.truth.is_finite()) {
            let msg = format!("non-finite state for agent {} at t = {t}", a.spec.id);
            return self.fail(msg, sink);
        }
        self.stage_channel(&poses, sink);
        self.stage_transmit(&poses, sink);
        self.tick += 1;
        true
    }

    fn fail(&mut self, msg: String, sink: &mut dyn EventSink) -> bool {
        self.emit(sink, None, EventData::Diagnostic { message: msg.clone() });
        self.diagnostic = Some(msg);
        self.finish(EndReason::Diagnostic, sink);
        false
    }

    fn stage_truth(&self, sink: &mut dyn EventSink) {
        if self.tick.is_multiple_of(self.scenario.log.truth_every) {
            for a in &self.agents {
                self.emit(sink, Some(&a.spec.id), EventData::Truth(a.truth));
            }
        }
    }

    fn stage_sensors(&mut self, sink: &mut dyn EventSink) -> Vec<Vec<Measurement>> {
        let t = self.t();
        let tick = self.tick;
        let mut all = Vec::with_capacity(self.agents.len());
        for i in 0..self.agents.len() {
            let a = &mut self.agents[i];
            let mut batch = Vec::new();
            for kind in SensorKind::ALL {
                let k = sensor_index(kind);
                if !tick.is_multiple_of(a.periods[k]) {
                    continue;
                }
                if let Some(m) = sensors::sample(kind, &a.truth, t, &a.spec.sensors, &mut a.sensor_rng[k]) {
                    match m.payload {
                        Payload::Dvl { velocity } => {
                            a.held.dvl = Some(velocity);
                            a.held.last_dvl = Some(t);
                        }
                        Payload::Imu { orientation } => a.held.imu = Some(orientation),
                        Payload::Depth { z } => a.held.depth = Some(z),
                        Payload::Gps { .. } => a.held.last_gps = Some(t),
                    }
                    batch.push(m);
                }
            }
            all.push(batch);
        }
        if self.scenario.log.sensors {
            for (a, batch) in self.agents.iter().zip(&all) {
                for m in batch {
                    self.emit(sink, Some(&a.spec.id), EventData::Sensor { payload: m.payload });
                }
            }
        }
        all
    }

    fn stage_estimator(&mut self, batches: Vec<Vec<Measurement>>, sink: &mut dyn EventSink) -> Result<(), String> {
        for (i, batch) in batches.into_iter().enumerate() {
            let results = self.agents[i].estimator.ingest(&batch);
            for r in results {
                let id = self.agents[i].spec.id.clone();
                match r {
                    Ok(u) => self.emit(
                        sink,
                        Some(&id),
                        EventData::Estimate {
                            node: u.node,
                            node_t: u.t,
                            pose: u.estimate,
                            relinearized: u.report.relinearized,
                            degraded: u.report.degraded,
                        },
                    ),
                    Err(crate::estimator::EstimatorError::Graph(e)) => return Err(format!("estimator failure for agent {id}: {e}")),
                    Err(e) => self.emit(sink, Some(&id), EventData::Diagnostic { message: e.to_string() }),
                }
            }
        }
        Ok(())
    }

    fn stage_control(&mut self, sink: &mut dyn EventSink) {
        let t = self.t();
        let dt = self.scenario.dt;
        let log_control = self.tick.is_multiple_of(self.scenario.log.control_every);
        let mut events = Vec::new();
        for a in &mut self.agents {
            let est = a.estimate();
            let setpoint = match (&a.plan, a.mission) {
                (Some(plan), Some(state)) => {
                    let step = mission::next_setpoint(&est, plan, &state);
                    if let Some((index, distance)) = step.reached {
                        let w = plan.waypoints[index];
                        a.reached.push(ReachedWaypoint {
                            index,
                            t,
                            x: w.x,
                            y: w.y,
                            estimate_distance: distance,
                            truth_distance: a.truth.pose.horizontal_distance(w.x, w.y),
                        });
                        events.push((a.spec.id.clone(), EventData::WaypointReached { index, x: w.x, y: w.y, distance }));
                    }
                    if step.state.status != state.status {
                        events.push((
                            a.spec.id.clone(),
                            EventData::Mission {
                                status: step.state.status,
                                index: step.state.index,
                            },
                        ));
                    }
                    a.mission = Some(step.state);
                    step.setpoint
                }
                _ if a.aborted => Setpoint::surface(est.yaw),
                _ => Setpoint {
                    heading_ref: a.spec.initial_pose.yaw,
                    speed_ref: 0.0,
                    depth_ref: a.spec.initial_pose.z,
                },
            };
            let measured = Measured {
                z: a.held.depth.unwrap_or(est.z),
                pitch: a.held.imu.map_or(est.pitch, |o| o[1]),
                yaw: a.held.imu.map_or(est.yaw, |o| o[2]),
                u: a.held.dvl.map_or(0.0, |v| v[0]),
            };
            let trace = a.autopilot.step(&setpoint, &measured, dt, &a.gains, &a.spec.plant);
            a.autopilot_command = Some(trace.command);
            if log_control {
                events.push((a.spec.id.clone(), EventData::Control(trace)));
            }
        }
        for (id, e) in events {
            self.emit(sink, Some(&id), e);
        }
    }

    fn beacons(&self, poses: &[Pose6]) -> Vec<Beacon> {
        let mut out: Vec<Beacon> = self
            .agents
            .iter()
            .zip(poses)
            .map(|(a, p)| Beacon {
                id: a.spec.beacon_id,
                position: p.position(),
            })
            .collect();
        out.push(Beacon {
            id: self.base.station.id,
            position: self.base.position,
        });
        out
    }

    fn stage_channel(&mut self, poses: &[Pose6], sink: &mut dyn EventSink) {
        let t = self.t();
        let dt = self.scenario.dt;
        let sigma = self.scenario.channel.aoa_sigma;
        for r in self.channel.resolve_due(t) {
            let receiver = self.agents.iter().position(|a| a.spec.beacon_id == r.receiver);
            let name = receiver.map_or(BASE_NAME.to_owned(), |i| self.agents[i].spec.id.clone());
            if let Some(reason) = r.lost {
                self.emit(
                    sink,
                    Some(&name),
                    EventData::Loss {
                        tx: r.tx,
                        src: r.src,
                        receiver: r.receiver,
                        reason,
                    },
                );
                continue;
            }
            let packet = AcousticPacket::decode(&r.frame).ok();
            let quantized = (r.arrival / dt - 1e-9).ceil() * dt;
            self.emit(
                sink,
                Some(&name),
                EventData::Rx {
                    tx: r.tx,
                    src: r.src,
                    receiver: r.receiver,
                    tx_time: r.tx_time,
                    arrival: r.arrival,
                    end: r.end,
                    delay: quantized - r.tx_time,
                    packet,
                },
            );
            self.emit_aoa(receiver, &r, poses, sigma, &name, sink);
            match receiver {
                None => {
                    if let Some(p) = &packet {
                        self.base.station.observe(t, p);
                    }
                }
                Some(i) => self.react(i, &r, packet, sink),
            }
        }
    }

    fn emit_aoa(&mut self, receiver: Option<usize>, r: &Reception, poses: &[Pose6], sigma: f64, name: &str, sink: &mut dyn EventSink) {
        let (pose, rng) = match receiver {
            Some(i) if self.agents[i].spec.usbl => (poses[i], &mut self.agents[i].aoa_rng),
            Some(_) => return,
            None => {
                let p = self.base.position;
                (Pose6::new(p.x, p.y, p.z, 0.0, 0.0, 0.0), &mut self.base.aoa_rng)
            }
        };
        if let Some((azimuth, elevation)) = compute_aoa(&pose, &r.src_position, sigma, rng) {
            self.emit(
                sink,
                Some(name),
                EventData::Aoa {
                    source: r.src,
                    receiver: r.receiver,
                    azimuth,
                    elevation,
                },
            );
        }
    }

    fn react(&mut self, i: usize, r: &Reception, packet: Option<AcousticPacket>, sink: &mut dyn EventSink) {
        let t = self.t();
        let a = &mut self.agents[i];
        let action = match &packet {
            Some(p) => {
                if let Some(poller) = &mut a.poller {
                    poller.observe(t, p, &a.gate);
                }
                a.responder.handle(p)
            }
            None => a.responder.on_frame(&r.frame),
        };
        let mut events = Vec::new();
        match action {
            Some(VehicleAction::Abort) => {
                a.aborted = true;
                if let Some(state) = &mut a.mission {
                    let was = *state;
                    *state = mission::abort(state);
                    if was.status != MissionStatus::Aborted {
                        events.push(EventData::Mission {
                            status: state.status,
                            index: state.index,
                        });
                    }
                }
            }
            Some(VehicleAction::AddWaypoint(w)) => {
                let wp = Waypoint {
                    x: w.x,
                    y: w.y,
                    depth: w.depth,
                    speed: w.speed,
                    tolerance: a.spec.command_tolerance,
                };
                match (&mut a.plan, &mut a.mission) {
                    (Some(plan), Some(state)) => {
                        let was = *state;
                        mission::append_waypoint(plan, state, wp);
                        if was != *state {
                            events.push(EventData::Mission {
                                status: state.status,
                                index: state.index,
                            });
                        }
                    }
                    _ if a.aborted => {}
                    _ => {
                        a.plan = Some(MissionPlan {
                            waypoints: vec![wp],
                            terminal: mission::Terminal::Hold,
                        });
                        let state = MissionState::start();
                        a.mission = Some(state);
                        events.push(EventData::Mission {
                            status: state.status,
                            index: state.index,
                        });
                    }
                }
            }
            Some(VehicleAction::SendStatus) | None => {}
        }
        let id = a.spec.id.clone();
        for e in events {
            self.emit(sink, Some(&id), e);
        }
    }

    fn stage_transmit(&mut self, poses: &[Pose6], sink: &mut dyn EventSink) {
        let t = self.t();
        let mut outgoing: Vec<(Option<usize>, AcousticPacket)> = Vec::new();
        if let Some(cmd) = self.base.station.step(t, &mut self.base.gate) {
            outgoing.push((
                None,
                AcousticPacket {
                    src: self.base.station.id,
                    body: cmd.body,
                },
            ));
        }
        for (i, a) in self.agents.iter_mut().enumerate() {
            let src = a.spec.beacon_id;
            if let Some(poller) = &mut a.poller {
                match poller.step(t, &mut a.gate) {
                    Some(LeadSlot::Poll { target }) => outgoing.push((Some(i), AcousticPacket { src, body: PacketBody::Poll { dst: target } })),
                    Some(LeadSlot::SelfStatus) => outgoing.push((Some(i), AcousticPacket { src, body: PacketBody::Status(a.status_record(t)) })),
                    None => {}
                }
            }
            if a.responder.take_reply(t, &mut a.gate) {
                outgoing.push((Some(i), AcousticPacket { src, body: PacketBody::Status(a.status_record(t)) }));
            }
        }
        if outgoing.is_empty() {
            return;
        }
        let beacons = self.beacons(poses);
        for (who, pkt) in outgoing {
            let name = who.map_or(BASE_NAME.to_owned(), |i| self.agents[i].spec.id.clone());
            let frame = match pkt.encode() {
                Ok(f) => f,
                Err(e) => {
                    self.emit(sink, Some(&name), EventData::Diagnostic { message: format!("packet not sent: {e}") });
                    continue;
                }
            };
            *self.tx_by_kind.entry(pkt.kind()).or_default() += 1;
            self.max_frame_len = self.max_frame_len.max(frame.len());
            let (tx, lost) = self.channel.transmit(pkt.src, frame, t, &beacons);
            self.emit(
                sink,
                Some(&name),
                EventData::Tx {
                    tx: tx.id,
                    src: tx.src,
                    dst: pkt.dst(),
                    packet: pkt.kind(),
                    len: tx.frame.len(),
                    bytes: hex::encode(&tx.frame),
                    end: tx.end,
                },
            );
            for r in lost {
                let rname = self
                    .agents
                    .iter()
                    .find(|a| a.spec.beacon_id == r.receiver)
                    .map_or(BASE_NAME.to_owned(), |a| a.spec.id.clone());
                self.emit(
                    sink,
                    Some(&rname),
                    EventData::Loss {
                        tx: r.tx,
                        src: r.src,
                        receiver: r.receiver,
                        reason: r.lost.expect("range losses carry a reason"),
                    },
                );
            }
        }
    }

    fn finish(&mut self, end: EndReason, sink: &mut dyn EventSink) {
        for a in &self.agents {
            self.emit(sink, Some(&a.spec.id), EventData::Truth(a.truth));
        }
        for a in &self.agents {
            self.emit(sink, Some(&a.spec.id), EventData::Trajectory { nodes: a.estimator.trajectory() });
        }
        let summary = RunSummary {
            name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            ticks: self.tick,
            t_end: self.t(),
            end,
            diagnostic: self.diagnostic.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentSummary {
                    id: a.spec.id.clone(),
                    beacon_id: a.spec.beacon_id,
                    role: a.spec.role,
                    final_truth: a.truth,
                    final_estimate: a.estimator.current_estimate().map(|(p, _)| p),
                    nodes: a.estimator.graph().len(),
                    estimator_degraded: a.estimator.degraded(),
                    association: a.estimator.stats(),
                    mission: a.mission.map(|m| MissionSummary {
                        status: m.status,
                        index: m.index,
                        waypoints: a.plan.as_ref().map_or(0, |p| p.waypoints.len()),
                        reached: a.reached.clone(),
                    }),
                    aborted: a.aborted,
                    responder: a.responder.stats(),
                })
                .collect(),
            packets: PacketSummary {
                channel: self.channel.stats(),
                transmitted_by_kind: self.tx_by_kind.clone(),
                max_frame_len: self.max_frame_len,
            },
            lead: self.agents.iter().find_map(|a| a.poller.as_ref().map(|p| p.stats().clone())),
            commands_injected: self.commands_injected,
        };
        self.emit(
            sink,
            None,
            EventData::RunEnd {
                summary: Box::new(summary.clone()),
            },
        );
        self.finished = Some(summary);
    }

    /// Steps until the run ends and returns its summary.
    pub fn run_to_end(&mut self, sink: &mut dyn EventSink) -> RunSummary {
        while self.step(sink) {}
        self.finished.clone().expect("finished run has a summary")
    }
}

/// Runs `scenario` from start to end.
pub fn run(scenario: Scenario, sink: &mut dyn EventSink) -> RunSummary {
    Simulation::new(scenario).run_to_end(sink)
}
