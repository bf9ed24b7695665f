use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use auvfleet_core::events::read_log;
use auvfleet_core::scenario::load_scenario;
use auvfleet_gateway::fleet;
use auvfleet_gateway::runs::{EVENTS_FILE, FLEET_FILE, SCENARIO_FILE, SUMMARY_FILE};

/// Rebuilds the fleet views from `events.ndjson` and checks them line for
/// line against `fleet.ndjson`.
///
/// A run that never finished (no `summary.json`) may have recorded fewer
/// views than its log yields, since each view is written after the event
/// that caused it; the recorded views must then be a prefix.
pub fn replay(dir: &Path) -> Result<()> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))
    };
    let scenario = load_scenario(&read(SCENARIO_FILE)?).with_context(|| format!("loading {}", dir.join(SCENARIO_FILE).display()))?;
    let events = read_log(&read(EVENTS_FILE)?);
    let recorded = read(FLEET_FILE)?;
    let recorded: Vec<&str> = recorded.lines().collect();
    let derived: Vec<String> = fleet::replay(&scenario, &events).iter().map(|v| v.to_json()).collect();
    let finished = dir.join(SUMMARY_FILE).exists();

    if let Some(i) = recorded.iter().zip(&derived).position(|(a, b)| *a != b.as_str()) {
        bail!("fleet update {} differs from the one re-derived from {}", i + 1, EVENTS_FILE);
    }
    if recorded.len() > derived.len() {
        bail!("{FLEET_FILE} has {} updates but {EVENTS_FILE} only yields {}", recorded.len(), derived.len());
    }
    if finished && recorded.len() != derived.len() {
        bail!("{FLEET_FILE} has {} updates but {EVENTS_FILE} yields {}", recorded.len(), derived.len());
    }
    println!("{} events, {} fleet updates match", events.len(), recorded.len());
    if !finished {
        println!("run did not finish; {} further updates derived from the log", derived.len() - recorded.len());
    }
    Ok(())
}
