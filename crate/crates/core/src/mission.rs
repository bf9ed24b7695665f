//! Waypoint planner: turns the navigation estimate into autopilot setpoints.

use serde::{Deserialize, Serialize};

use crate::control::Setpoint;
use crate::geometry::Pose6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Transit depth toward this waypoint (m).
    pub depth: f64,
    /// Transit speed (m/s).
    pub speed: f64,
    /// Horizontal acceptance radius (m).
    pub tolerance: f64,
}

impl Waypoint {
    pub fn validate(&self) -> Result<(), String> {
        if ![self.x, self.y, self.depth, self.speed, self.tolerance].iter().all(|v| v.is_finite()) {
            return Err("waypoint fields must be finite".into());
        }
        if self.tolerance <= 0.0 {
            return Err("waypoint tolerance must be positive".into());
        }
        if self.depth < 0.0 {
            return Err("waypoint depth must be non-negative".into());
        }
        if self.speed < 0.0 {
            return Err("waypoint speed must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    /// Stop and come up once the last waypoint is reached.
    #[default]
    Surface,
    /// Stop at the last waypoint's depth.
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionPlan {
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub terminal: Terminal,
}

impl MissionPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.waypoints.is_empty() {
            return Err("mission needs at least one waypoint".into());
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            w.validate().map_err(|e| format!("waypoint {i}: {e}"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionStatus {
    Running,
    Complete,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissionState {
    pub index: usize,
    pub status: MissionStatus,
}

impl MissionState {
    pub fn start() -> Self {
        Self {
            index: 0,
            status: MissionStatus::Running,
        }
    }
}

/// Outcome of one planner step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerStep {
    pub setpoint: Setpoint,
    pub state: MissionState,
    /// Index of the waypoint reached this step and the distance that satisfied the test.
    pub reached: Option<(usize, f64)>,
}

fn bearing(from: &Pose6, w: &Waypoint) -> f64 {
    (w.y - from.y).atan2(w.x - from.x)
}

fn terminal_setpoint(estimate: &Pose6, plan: &MissionPlan) -> Setpoint {
    match plan.terminal {
        Terminal::Surface => Setpoint::surface(estimate.yaw),
        Terminal::Hold => Setpoint {
            heading_ref: estimate.yaw,
            speed_ref: 0.0,
            depth_ref: plan.waypoints.last().map_or(0.0, |w| w.depth),
        },
    }
}

/// Setpoint toward the active waypoint. When the estimate is within the
/// waypoint's horizontal radius the index advances (at most once per call)
/// and the setpoint targets the next waypoint, or the terminal behavior
/// after the last one.
pub fn next_setpoint(estimate: &Pose6, plan: &MissionPlan, state: &MissionState) -> PlannerStep {
    let mut state = *state;
    let setpoint = match state.status {
        MissionStatus::Aborted => Setpoint::surface(estimate.yaw),
        MissionStatus::Complete => terminal_setpoint(estimate, plan),
        MissionStatus::Running => {
            let mut reached = None;
            if let Some(w) = plan.waypoints.get(state.index) {
                let d = estimate.horizontal_distance(w.x, w.y);
                if d <= w.tolerance {
                    reached = Some((state.index, d));
                    state.index += 1;
                }
            }
            let setpoint = match plan.waypoints.get(state.index) {
                Some(w) => Setpoint {
                    heading_ref: bearing(estimate, w),
                    speed_ref: w.speed,
                    depth_ref: w.depth,
                },
                None => {
                    state.status = MissionStatus::Complete;
                    terminal_setpoint(estimate, plan)
                }
            };
            return PlannerStep { setpoint, state, reached };
        }
    };
    PlannerStep {
        setpoint,
        state,
        reached: None,
    }
}

/// Aborts from any status; idempotent.
pub fn abort(state: &MissionState) -> MissionState {
    MissionState {
        index: state.index,
        status: MissionStatus::Aborted,
    }
}

/// Appends a waypoint. A completed mission resumes toward it; an aborted
/// one stays aborted.
pub fn append_waypoint(plan: &mut MissionPlan, state: &mut MissionState, w: Waypoint) {
    plan.waypoints.push(w);
    if state.status == MissionStatus::Complete {
        state.index = plan.waypoints.len() - 1;
        state.status = MissionStatus::Running;
    }
}
