//! Offline runs and the files they leave behind.
//!
//! | file                     | contents                                      |
//! |--------------------------|-----------------------------------------------|
//! | `scenario.toml`          | the scenario as run, seed included            |
//! | `events.ndjson`          | full event log                                |
//! | `fleet.ndjson`           | operator fleet views, as the gateway makes    |
//! | `trajectory_<agent>.csv` | truth and latest estimate per truth sample    |
//! | `controller_<agent>.csv` | setpoints, feedback and actuator commands     |
//! | `packets.json`           | channel statistics and every frame event      |
//! | `summary.json`           | run summary                                   |

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use auvfleet_core::events::{Event, EventData, EventSink, NdjsonSink};
use auvfleet_core::geometry::Pose6;
use auvfleet_core::scenario::load_scenario;
use auvfleet_core::sim::{PacketSummary, Simulation};
use auvfleet_gateway::fleet::FleetTracker;
use auvfleet_gateway::runs::{EVENTS_FILE, FLEET_FILE, SCENARIO_FILE, SUMMARY_FILE};

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
    est_x: Option<f64>,
    est_y: Option<f64>,
    est_z: Option<f64>,
    est_roll: Option<f64>,
    est_pitch: Option<f64>,
    est_yaw: Option<f64>,
}

#[derive(Serialize)]
struct ControllerRow {
    t: f64,
    depth_ref: f64,
    heading_ref: f64,
    speed_ref: f64,
    pitch_ref: f64,
    z: f64,
    pitch: f64,
    yaw: f64,
    u: f64,
    thruster: f64,
    top_fin: f64,
    port_fin: f64,
    starboard_fin: f64,
}

#[derive(Serialize)]
struct Packets<'a> {
    stats: &'a PacketSummary,
    transmissions: &'a [Event],
    receptions: &'a [Event],
    losses: &'a [Event],
}

struct AgentFiles {
    trajectory: csv::Writer<File>,
    controller: csv::Writer<File>,
    estimate: Option<Pose6>,
}

/// Splits the event stream into the per-agent tables and packet lists.
struct Outputs {
    dir: PathBuf,
    events: NdjsonSink<BufWriter<File>>,
    fleet: BufWriter<File>,
    tracker: FleetTracker,
    agents: BTreeMap<String, AgentFiles>,
    tx: Vec<Event>,
    rx: Vec<Event>,
    loss: Vec<Event>,
    error: Option<anyhow::Error>,
}

impl Outputs {
    fn agent(&mut self, id: &str) -> Result<&mut AgentFiles> {
        if !self.agents.contains_key(id) {
            let open = |name: String| -> Result<csv::Writer<File>> {
                let path = self.dir.join(name);
                csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
            };
            let files = AgentFiles {
                trajectory: open(format!("trajectory_{id}.csv"))?,
                controller: open(format!("controller_{id}.csv"))?,
                estimate: None,
            };
            self.agents.insert(id.to_string(), files);
        }
        Ok(self.agents.get_mut(id).expect("inserted above"))
    }

    fn record(&mut self, e: &Event) -> Result<()> {
        self.events.emit(e);
        if let Some(view) = self.tracker.observe(e) {
            writeln!(self.fleet, "{}", view.to_json())?;
        }
        match &e.data {
            EventData::Tx { .. } => self.tx.push(e.clone()),
            EventData::Rx { .. } => self.rx.push(e.clone()),
            EventData::Loss { .. } => self.loss.push(e.clone()),
            _ => {}
        }
        let Some(id) = e.agent.as_deref() else { return Ok(()) };
        match &e.data {
            EventData::Estimate { pose, .. } => self.agent(id)?.estimate = Some(*pose),
            EventData::Truth(s) => {
                let files = self.agent(id)?;
                let p = s.pose;
                let est = files.estimate;
                files.trajectory.serialize(TrajectoryRow {
                    t: e.t,
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    roll: p.roll,
                    pitch: p.pitch,
                    yaw: p.yaw,
                    est_x: est.map(|q| q.x),
                    est_y: est.map(|q| q.y),
                    est_z: est.map(|q| q.z),
                    est_roll: est.map(|q| q.roll),
                    est_pitch: est.map(|q| q.pitch),
                    est_yaw: est.map(|q| q.yaw),
                })?;
            }
            EventData::Control(c) => {
                self.agent(id)?.controller.serialize(ControllerRow {
                    t: e.t,
                    depth_ref: c.setpoint.depth_ref,
                    heading_ref: c.setpoint.heading_ref,
                    speed_ref: c.setpoint.speed_ref,
                    pitch_ref: c.pitch_ref,
                    z: c.measured.z,
                    pitch: c.measured.pitch,
                    yaw: c.measured.yaw,
                    u: c.measured.u,
                    thruster: c.command.thruster,
                    top_fin: c.command.top_fin,
                    port_fin: c.command.port_fin,
                    starboard_fin: c.command.starboard_fin,
                })?;
            }
            _ => {}
        }
        Ok(())
    }
}

impl EventSink for Outputs {
    fn emit(&mut self, e: &Event) {
        if self.error.is_some() {
            return;
        }
        if let Err(err) = self.record(e) {
            self.error = Some(err);
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn run(scenario_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let text = fs::read_to_string(scenario_path).with_context(|| format!("reading scenario {}", scenario_path.display()))?;
    let mut scenario = load_scenario(&text).with_context(|| format!("loading scenario {}", scenario_path.display()))?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let dir = out.unwrap_or_else(|| {
        let stem = scenario_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        let name = if scenario.name.is_empty() { stem } else { &scenario.name };
        PathBuf::from("auvfleet-out").join(format!("{name}-{}", scenario.seed))
    });
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(SCENARIO_FILE), scenario.to_toml()).with_context(|| format!("writing {}", dir.display()))?;

    let mut outputs = Outputs {
        events: NdjsonSink::new(create(&dir.join(EVENTS_FILE))?),
        fleet: create(&dir.join(FLEET_FILE))?,
        tracker: FleetTracker::new(&scenario),
        dir: dir.clone(),
        agents: BTreeMap::new(),
        tx: Vec::new(),
        rx: Vec::new(),
        loss: Vec::new(),
        error: None,
    };
    let summary = Simulation::new(scenario).run_to_end(&mut outputs);
    if let Some(e) = outputs.error.take() {
        return Err(e.context(format!("writing outputs to {}", dir.display())));
    }
    outputs.events.finish().with_context(|| format!("writing {}", dir.join(EVENTS_FILE).display()))?;
    outputs.fleet.flush()?;
    for files in outputs.agents.values_mut() {
        files.trajectory.flush()?;
        files.controller.flush()?;
    }
    let packets = Packets {
        stats: &summary.packets,
        transmissions: &outputs.tx,
        receptions: &outputs.rx,
        losses: &outputs.loss,
    };
    fs::write(dir.join("packets.json"), serde_json::to_string_pretty(&packets)?)?;
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;

    println!("{} ({:?}) t = {:.2} s, {} ticks", summary.name, summary.end, summary.t_end, summary.ticks);
    for a in &summary.agents {
        match &a.mission {
            Some(m) => println!("  {}: {:?}, {}/{} waypoints reached", a.id, m.status, m.reached.len(), m.waypoints),
            None => println!("  {}: no mission", a.id),
        }
    }
    if let Some(d) = &summary.diagnostic {
        println!("  diagnostic: {d}");
    }
    println!("outputs in {}", dir.display());
    Ok(())
}
