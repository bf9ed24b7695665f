//! Operator commands entering a run through the base station.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Addressee of a command: one vehicle by agent id, or every vehicle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Target {
    All,
    Vehicle(String),
}

impl TryFrom<String> for Target {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        match s.as_str() {
            "" => Err("empty command target".into()),
            "all" | "ALL" => Ok(Target::All),
            _ => Ok(Target::Vehicle(s)),
        }
    }
}

impl From<Target> for String {
    fn from(t: Target) -> Self {
        t.to_string()
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::All => f.write_str("all"),
            Target::Vehicle(id) => f.write_str(id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorCommand {
    Abort {
        target: Target,
    },
    Waypoint {
        target: Target,
        x: f64,
        y: f64,
        depth: f64,
        speed: f64,
    },
    /// Run control; handled by whoever drives the simulation.
    Start,
    Stop,
}

impl OperatorCommand {
    pub fn target(&self) -> Option<&Target> {
        match self {
            OperatorCommand::Abort { target } | OperatorCommand::Waypoint { target, .. } => Some(target),
            _ => None,
        }
    }

    /// Checks the parameters a vehicle would need to act on the command.
    pub fn validate(&self) -> Result<(), String> {
        if let OperatorCommand::Waypoint { x, y, depth, speed, .. } = *self {
            if ![x, y, depth, speed].iter().all(|v| v.is_finite()) {
                return Err("waypoint fields must be finite".into());
            }
            if !(0.0..=crate::acoustics::packet::MAX_STATUS_DEPTH).contains(&depth) {
                return Err(format!("waypoint depth {depth} outside the encodable range"));
            }
            if !(0.0..=crate::acoustics::packet::MAX_COMMAND_SPEED).contains(&speed) {
                return Err(format!("waypoint speed {speed} outside the encodable range"));
            }
        }
        Ok(())
    }
}

/// A command scheduled in the scenario at a fixed sim time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCommand {
    pub t: f64,
    #[serde(flatten)]
    pub command: OperatorCommand,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_round_trips_through_json() {
        let c = OperatorCommand::Abort { target: Target::All };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"kind":"abort","target":"all"}"#);
        assert_eq!(serde_json::from_str::<OperatorCommand>(&s).unwrap(), c);
        let w: OperatorCommand =
            serde_json::from_str(r#"{"kind":"waypoint","target":"coug1","x":1,"y":2,"depth":1.5,"speed":1}"#).unwrap();
        assert_eq!(w.target(), Some(&Target::Vehicle("coug1".into())));
    }

    #[test]
    fn waypoint_ranges_checked() {
        let w = OperatorCommand::Waypoint {
            target: Target::All,
            x: 0.0,
            y: 0.0,
            depth: 700.0,
            speed: 1.0,
        };
        assert!(w.validate().is_err());
    }
}
