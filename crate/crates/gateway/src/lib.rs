//! HTTP gateway for simulation runs.
//!
//! Holds a scenario library and the runs started from it, exposes them
//! under `/api/v1` (see [`api`]) and persists every run to its own
//! directory under `data_dir/runs`.

pub mod api;
pub mod fleet;
pub mod runs;

use std::collections::BTreeMap;
use std::future::Future;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use auvfleet_core::scenario::{load_scenario, Scenario};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::runs::RunHandle;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub data_dir: PathBuf,
    /// Scenario files (`*.toml`) loaded at startup.
    pub scenario_dir: Option<PathBuf>,
    /// Pace for runs that do not ask for one; `None` runs flat out.
    pub default_pace: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("{0}")]
    InvalidScenario(String),
    #[error("scenario {0:?} not found")]
    UnknownScenario(String),
    #[error("run {0:?} not found")]
    UnknownRun(String),
    #[error("run {0:?} is still active")]
    RunActive(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub agents: Vec<String>,
}

struct StoredScenario {
    text: String,
    scenario: Scenario,
}

impl StoredScenario {
    fn info(&self, name: &str) -> ScenarioInfo {
        ScenarioInfo {
            name: name.to_string(),
            seed: self.scenario.seed,
            duration: self.scenario.duration,
            agents: self.scenario.agents.iter().map(|a| a.id.clone()).collect(),
        }
    }
}

#[derive(Default)]
struct Registry {
    scenarios: BTreeMap<String, StoredScenario>,
    runs: BTreeMap<String, Arc<RunHandle>>,
    next_run: u64,
}

pub struct Gateway {
    config: GatewayConfig,
    registry: Mutex<Registry>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) && !name.starts_with('.')
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> io::Result<Arc<Self>> {
        std::fs::create_dir_all(config.data_dir.join("runs"))?;
        std::fs::create_dir_all(config.data_dir.join("scenarios"))?;
        let gw = Self {
            config,
            registry: Mutex::new(Registry::default()),
        };
        if let Some(dir) = gw.config.scenario_dir.clone() {
            gw.load_dir(&dir)?;
        }
        Ok(Arc::new(gw))
    }

    fn load_dir(&self, dir: &Path) -> io::Result<()> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "toml"))
            .collect();
        paths.sort();
        let mut reg = self.registry.lock().expect("registry lock");
        for path in paths {
            let text = std::fs::read_to_string(&path)?;
            let scenario = load_scenario(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let name = if scenario.name.is_empty() { stem.to_string() } else { scenario.name.clone() };
            reg.scenarios.insert(name, StoredScenario { text, scenario });
        }
        Ok(())
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn scenarios(&self) -> Vec<ScenarioInfo> {
        let reg = self.registry.lock().expect("registry lock");
        reg.scenarios.iter().map(|(n, s)| s.info(n)).collect()
    }

    pub fn scenario_text(&self, name: &str) -> Option<String> {
        self.registry.lock().expect("registry lock").scenarios.get(name).map(|s| s.text.clone())
    }

    /// Validates a TOML scenario, stores it under its `name` and returns
    /// its summary. An existing scenario with the same name is replaced.
    pub fn add_scenario(&self, text: &str) -> Result<ScenarioInfo, GatewayError> {
        let scenario = load_scenario(text).map_err(|e| GatewayError::InvalidScenario(e.to_string()))?;
        let name = scenario.name.clone();
        if !valid_name(&name) {
            return Err(GatewayError::InvalidScenario(format!(
                "scenario name {name:?} must be non-empty and use only letters, digits, '_', '-' or '.'"
            )));
        }
        std::fs::write(self.config.data_dir.join("scenarios").join(format!("{name}.toml")), text)?;
        let stored = StoredScenario {
            text: text.to_string(),
            scenario,
        };
        let info = stored.info(&name);
        self.registry.lock().expect("registry lock").scenarios.insert(name, stored);
        Ok(info)
    }

    pub fn runs(&self) -> Vec<Arc<RunHandle>> {
        self.registry.lock().expect("registry lock").runs.values().cloned().collect()
    }

    pub fn run(&self, id: &str) -> Option<Arc<RunHandle>> {
        self.registry.lock().expect("registry lock").runs.get(id).cloned()
    }

    /// Starts a run of a stored scenario. Only one run may be active at a
    /// time.
    pub fn start_run(&self, scenario: &str, seed: Option<u64>, pace: Option<f64>) -> Result<Arc<RunHandle>, GatewayError> {
        let mut reg = self.registry.lock().expect("registry lock");
        if let Some(active) = reg.runs.values().find(|r| r.is_active()) {
            return Err(GatewayError::RunActive(active.id.clone()));
        }
        let mut sc = reg
            .scenarios
            .get(scenario)
            .ok_or_else(|| GatewayError::UnknownScenario(scenario.to_string()))?
            .scenario
            .clone();
        if let Some(seed) = seed {
            sc.seed = seed;
        }
        let runs_dir = self.config.data_dir.join("runs");
        let (id, dir) = loop {
            reg.next_run += 1;
            let id = format!("run-{:04}", reg.next_run);
            let dir = runs_dir.join(&id);
            if !dir.exists() {
                break (id, dir);
            }
        };
        let handle = RunHandle::start(id.clone(), scenario.to_string(), sc, dir, pace.or(self.config.default_pace))?;
        reg.runs.insert(id, handle.clone());
        Ok(handle)
    }

    /// Stops every active run and waits for its files to be written.
    pub fn shutdown(&self) {
        for run in self.runs() {
            run.stop_blocking();
        }
    }
}

pub fn router(gw: Arc<Gateway>) -> axum::Router {
    api::router(gw)
}

/// Serves the API on `listener` until `signal` resolves. Active runs are
/// then stopped first, which also ends open fleet streams, so every run
/// directory is complete when this returns.
pub async fn serve(gw: Arc<Gateway>, listener: TcpListener, signal: impl Future<Output = ()> + Send + 'static) -> io::Result<()> {
    let stopper = gw.clone();
    let drain = async move {
        signal.await;
        let _ = tokio::task::spawn_blocking(move || stopper.shutdown()).await;
    };
    axum::serve(listener, router(gw.clone())).with_graceful_shutdown(drain).await?;
    tokio::task::spawn_blocking(move || gw.shutdown()).await.map_err(io::Error::other)
}
