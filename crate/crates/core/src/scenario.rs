//! Scenario documents (TOML).
//!
//! ```toml
//! schema_version = 1
//! name = "depth-step"
//! seed = 1
//! dt = 0.05
//! duration = 60.0
//!
//! [[agents]]
//! id = "coug1"
//! beacon_id = 2
//! role = "follower"
//! initial_pose = { x = 0.0, y = 0.0, z = 0.0 }
//! mission = { waypoints = [{ x = 50.0, y = 0.0, depth = 0.7, speed = 1.0, tolerance = 5.0 }] }
//! ```
//!
//! Omitted sections take defaults; controller gains default to pole
//! placement on the agent's plant. Unknown keys are rejected.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::channel::ChannelParams;
use crate::command::{OperatorCommand, ScriptedCommand, Target};
use crate::control::Gains;
use crate::dynamics::PlantParams;
use crate::estimator::EstimatorConfig;
use crate::geometry::Pose6;
use crate::mission::MissionPlan;
use crate::sensors::SensorConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Lead,
    Follower,
}

/// Static health flags reported in the status bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HealthFlags {
    pub leak: bool,
    pub low_battery: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    pub beacon_id: u8,
    pub role: Role,
    #[serde(default)]
    pub initial_pose: Pose6,
    #[serde(default)]
    pub plant: PlantParams,
    /// Pole-placement gains for `plant` when omitted.
    #[serde(default)]
    pub gains: Option<Gains>,
    #[serde(default)]
    pub sensors: SensorConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub mission: Option<MissionPlan>,
    /// Whether this vehicle carries a USBL and reports angles of arrival.
    #[serde(default = "yes")]
    pub usbl: bool,
    #[serde(default)]
    pub health: HealthFlags,
    /// Acceptance radius for waypoints received by acoustic command (m).
    #[serde(default = "default_command_tolerance")]
    pub command_tolerance: f64,
}

fn yes() -> bool {
    true
}

fn default_command_tolerance() -> f64 {
    3.0
}

impl AgentSpec {
    /// Configured gains, or pole placement for a controller running at `dt`.
    pub fn gains(&self, dt: f64) -> Gains {
        self.gains.unwrap_or_else(|| Gains::tuned_for(&self.plant, dt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStationSpec {
    pub beacon_id: u8,
    /// NED position (m).
    pub position: [f64; 3],
}

impl Default for BaseStationSpec {
    fn default() -> Self {
        Self {
            beacon_id: 0,
            position: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSpec {
    /// The lead takes one slot per polling cycle to report its own status.
    pub lead_self_report: bool,
    /// With a lead present, the base station sends queued commands anyway
    /// after this long without hearing a status (s).
    pub base_silence_fallback: f64,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            lead_self_report: true,
            base_silence_fallback: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogSpec {
    pub sensors: bool,
    /// Emit truth every this many ticks.
    pub truth_every: u64,
    /// Emit controller traces every this many ticks.
    pub control_every: u64,
}

impl Default for LogSpec {
    fn default() -> Self {
        Self {
            sensors: true,
            truth_every: 1,
            control_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub base_station: BaseStationSpec,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub log: LogSpec,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub commands: Vec<ScriptedCommand>,
}

fn default_dt() -> f64 {
    0.05
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn lead(&self) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.role == Role::Lead)
    }

    pub fn agent(&self, id: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Number of steps the run takes.
    pub fn ticks(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive".into());
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad("duration must be non-negative".into());
        }
        let steps = self.duration / self.dt;
        if (steps - steps.round()).abs() > 1e-6 {
            return bad("duration must be a whole number of steps".into());
        }
        if self.agents.is_empty() {
            return bad("at least one agent is required".into());
        }
        self.channel.validate().map_err(ScenarioError::Invalid)?;
        if !self.base_station.position.iter().all(|v| v.is_finite()) {
            return bad("base_station.position must be finite".into());
        }
        if !(self.protocol.base_silence_fallback.is_finite() && self.protocol.base_silence_fallback > 0.0) {
            return bad("protocol.base_silence_fallback must be positive".into());
        }
        if self.log.truth_every == 0 || self.log.control_every == 0 {
            return bad("log intervals must be positive".into());
        }
        let mut ids = BTreeSet::new();
        let mut beacons = BTreeSet::from([self.base_station.beacon_id]);
        for a in &self.agents {
            if a.id.is_empty() || a.id == "all" || a.id == "base" {
                return bad(format!("agent id {:?} is reserved or empty", a.id));
            }
            if !ids.insert(a.id.as_str()) {
                return bad(format!("duplicate agent id {:?}", a.id));
            }
            if a.beacon_id == crate::acoustics::BROADCAST {
                return bad(format!("agent {}: beacon id 255 is the broadcast address", a.id));
            }
            if !beacons.insert(a.beacon_id) {
                return bad(format!("duplicate beacon id {}", a.beacon_id));
            }
            let ctx = |e: String| ScenarioError::Invalid(format!("agent {}: {e}", a.id));
            if !a.initial_pose.is_finite() || a.initial_pose.z < 0.0 {
                return Err(ctx("initial_pose must be finite with z >= 0".into()));
            }
            a.plant.validate().map_err(ctx)?;
            a.gains(self.dt).validate().map_err(ctx)?;
            a.sensors.validate(self.dt).map_err(ctx)?;
            a.estimator.validate().map_err(ctx)?;
            if let Some(m) = &a.mission {
                m.validate().map_err(ctx)?;
            }
            if !(a.command_tolerance.is_finite() && a.command_tolerance > 0.0) {
                return Err(ctx("command_tolerance must be positive".into()));
            }
        }
        if self.agents.iter().filter(|a| a.role == Role::Lead).count() > 1 {
            return bad("more than one lead agent".into());
        }
        for (i, c) in self.commands.iter().enumerate() {
            if !(c.t.is_finite() && c.t >= 0.0) {
                return bad(format!("command {i}: time must be non-negative"));
            }
            c.command.validate().map_err(|e| ScenarioError::Invalid(format!("command {i}: {e}")))?;
            if let Some(Target::Vehicle(id)) = c.command.target() {
                if !ids.contains(id.as_str()) {
                    return bad(format!("command {i}: unknown target {id:?}"));
                }
            }
            if matches!(c.command, OperatorCommand::Start) {
                return bad(format!("command {i}: start cannot be scripted"));
            }
        }
        Ok(())
    }
}
