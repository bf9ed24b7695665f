//! Run lifecycle: one thread per run, an ordered command channel into it,
//! and the files a run leaves behind.
//!
//! A run directory holds `scenario.toml` (the exact document that ran),
//! `events.ndjson` and `fleet.ndjson` (both flushed per record, so a killed
//! process leaves a replayable prefix) and, once the run ends,
//! `summary.json`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use auvfleet_core::command::OperatorCommand;
use auvfleet_core::events::{Event, EventSink, NdjsonSink};
use auvfleet_core::scenario::Scenario;
use auvfleet_core::sim::{RunSummary, Simulation, SubmitError};
use serde::{Deserialize, Serialize};
use tokio::sync::{oneshot, watch, Notify};

use crate::fleet::{FleetTracker, RunStatus};

pub const EVENTS_FILE: &str = "events.ndjson";
pub const FLEET_FILE: &str = "fleet.ndjson";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SCENARIO_FILE: &str = "scenario.toml";

/// Published fleet views of one run, kept for late subscribers.
#[derive(Debug)]
pub struct FleetFeed {
    state: Mutex<FeedState>,
    pub(crate) notify: Notify,
}

#[derive(Debug)]
struct FeedState {
    initial: Arc<str>,
    lines: Vec<Arc<str>>,
    closed: bool,
}

impl FleetFeed {
    fn new(initial: String) -> Self {
        Self {
            state: Mutex::new(FeedState {
                initial: initial.into(),
                lines: Vec::new(),
                closed: false,
            }),
            notify: Notify::new(),
        }
    }

    fn push(&self, line: String) {
        self.state.lock().expect("feed lock").lines.push(line.into());
        self.notify.notify_waiters();
    }

    fn close(&self) {
        self.state.lock().expect("feed lock").closed = true;
        self.notify.notify_waiters();
    }

    /// Latest view as JSON.
    pub fn snapshot(&self) -> Arc<str> {
        let s = self.state.lock().expect("feed lock");
        s.lines.last().unwrap_or(&s.initial).clone()
    }

    /// View number `index` (0-based, so its `seq` is `index + 1`), and
    /// whether the feed has ended.
    pub fn get(&self, index: usize) -> (Option<Arc<str>>, bool) {
        let s = self.state.lock().expect("feed lock");
        (s.lines.get(index).cloned(), s.closed)
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("feed lock").lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandAck {
    /// Position of this command among those the run accepted.
    pub seq: u64,
    /// Tick at which the command enters the simulation.
    pub tick: u64,
    /// Wall-clock submission time (Unix seconds).
    pub issued_at: f64,
    pub command: OperatorCommand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Progress {
    tick: u64,
    t: f64,
    status: RunStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub id: String,
    pub scenario: String,
    pub seed: u64,
    pub duration: f64,
    /// Sim seconds per wall second; absent when unthrottled.
    pub pace: Option<f64>,
    pub status: RunStatus,
    pub tick: u64,
    pub t: f64,
    pub commands: u64,
}

enum Control {
    Command(OperatorCommand, f64, oneshot::Sender<Result<CommandAck, SubmitError>>),
}

pub struct RunHandle {
    pub id: String,
    pub scenario_name: String,
    pub dir: PathBuf,
    seed: u64,
    duration: f64,
    pace: Option<f64>,
    control: Mutex<mpsc::Sender<Control>>,
    pub feed: Arc<FleetFeed>,
    progress: Arc<Mutex<(Progress, u64)>>,
    done: watch::Receiver<Option<Arc<RunSummary>>>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("run is not active")]
    Inactive,
    #[error("{0}")]
    Rejected(SubmitError),
}

fn wall_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunHandle {
    /// Creates the run directory and starts the run thread.
    pub fn start(id: String, scenario_name: String, scenario: Scenario, dir: PathBuf, pace: Option<f64>) -> io::Result<Arc<Self>> {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(SCENARIO_FILE), scenario.to_toml())?;
        let events = BufWriter::new(File::create(dir.join(EVENTS_FILE))?);
        let fleet = BufWriter::new(File::create(dir.join(FLEET_FILE))?);
        let tracker = FleetTracker::new(&scenario);
        let feed = Arc::new(FleetFeed::new(tracker.snapshot().to_json()));
        let progress = Arc::new(Mutex::new((
            Progress {
                tick: 0,
                t: 0.0,
                status: RunStatus::Running,
            },
            0,
        )));
        let (done_tx, done_rx) = watch::channel(None);
        let (ctl_tx, ctl_rx) = mpsc::channel();
        let (seed, duration) = (scenario.seed, scenario.duration);
        let worker = Worker {
            sim: Simulation::new(scenario),
            sink: RunSink {
                events: Some(NdjsonSink::flushing(events)),
                fleet,
                fleet_error: None,
                tracker,
                feed: feed.clone(),
            },
            control: ctl_rx,
            progress: progress.clone(),
            pace,
            dir: dir.clone(),
            accepted: 0,
        };
        let closing = feed.clone();
        let thread = std::thread::Builder::new().name(format!("run-{id}")).spawn(move || {
            let summary = worker.run();
            let _ = done_tx.send(Some(Arc::new(summary)));
            // Subscribers see the end only once the run files can be fetched.
            closing.close();
        })?;
        Ok(Arc::new(Self {
            id,
            scenario_name,
            dir,
            seed,
            duration,
            pace,
            control: Mutex::new(ctl_tx),
            feed,
            progress,
            done: done_rx,
            thread: Mutex::new(Some(thread)),
        }))
    }

    pub fn info(&self) -> RunInfo {
        let (p, commands) = *self.progress.lock().expect("progress lock");
        RunInfo {
            id: self.id.clone(),
            scenario: self.scenario_name.clone(),
            seed: self.seed,
            duration: self.duration,
            pace: self.pace,
            status: p.status,
            tick: p.tick,
            t: p.t,
            commands,
        }
    }

    pub fn is_active(&self) -> bool {
        self.done.borrow().is_none()
    }

    /// Final summary once the run has ended.
    pub fn summary(&self) -> Option<Arc<RunSummary>> {
        self.done.borrow().clone()
    }

    /// Queues a command behind every earlier one and waits for the run to
    /// accept it.
    pub async fn submit(&self, cmd: OperatorCommand) -> Result<CommandAck, RunError> {
        let (tx, rx) = oneshot::channel();
        let issued_at = wall_seconds();
        self.control
            .lock()
            .expect("control lock")
            .send(Control::Command(cmd, issued_at, tx))
            .map_err(|_| RunError::Inactive)?;
        match rx.await {
            Ok(Ok(ack)) => Ok(ack),
            Ok(Err(SubmitError::Finished)) | Err(_) => Err(RunError::Inactive),
            Ok(Err(e)) => Err(RunError::Rejected(e)),
        }
    }

    /// Resolves once the run has ended.
    pub async fn finished(&self) -> Arc<RunSummary> {
        let mut rx = self.done.clone();
        let summary = rx.wait_for(Option::is_some).await.expect("run thread reports before exiting").clone();
        summary.expect("waited for Some")
    }

    /// Asks the run to stop and waits for its summary.
    pub async fn stop(&self) -> Arc<RunSummary> {
        if self.is_active() {
            // An error only means the run ended on its own meanwhile.
            let _ = self.submit(OperatorCommand::Stop).await;
        }
        self.finished().await
    }

    /// Blocking stop for shutdown paths outside the async runtime.
    pub fn stop_blocking(&self) {
        if self.is_active() {
            let (tx, _rx) = oneshot::channel();
            let _ = self.control.lock().expect("control lock").send(Control::Command(OperatorCommand::Stop, wall_seconds(), tx));
        }
        if let Some(t) = self.thread.lock().expect("thread lock").take() {
            let _ = t.join();
        }
    }
}

struct RunSink {
    events: Option<NdjsonSink<BufWriter<File>>>,
    fleet: BufWriter<File>,
    fleet_error: Option<io::Error>,
    tracker: FleetTracker,
    feed: Arc<FleetFeed>,
}

impl EventSink for RunSink {
    fn emit(&mut self, event: &Event) {
        if let Some(s) = &mut self.events {
            s.emit(event);
        }
        if let Some(view) = self.tracker.observe(event) {
            let line = view.to_json();
            if self.fleet_error.is_none() {
                let res = writeln!(self.fleet, "{line}").and_then(|_| self.fleet.flush());
                if let Err(e) = res {
                    self.fleet_error = Some(e);
                }
            }
            self.feed.push(line);
        }
    }
}

struct Worker {
    sim: Simulation,
    sink: RunSink,
    control: mpsc::Receiver<Control>,
    progress: Arc<Mutex<(Progress, u64)>>,
    pace: Option<f64>,
    dir: PathBuf,
    accepted: u64,
}

impl Worker {
    fn handle(&mut self, msg: Control) {
        let Control::Command(cmd, issued_at, reply) = msg;
        let res = self.sim.submit(cmd.clone()).map(|tick| {
            self.accepted += 1;
            CommandAck {
                seq: self.accepted,
                tick,
                issued_at,
                command: cmd,
            }
        });
        self.progress.lock().expect("progress lock").1 = self.accepted;
        let _ = reply.send(res);
    }

    fn drain(&mut self) {
        loop {
            match self.control.try_recv() {
                Ok(msg) => self.handle(msg),
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => return,
            }
        }
    }

    /// Sleeps until wall time catches up with sim time, still taking
    /// commands as they arrive.
    fn throttle(&mut self, start: Instant) {
        let Some(pace) = self.pace else { return };
        let due = start + Duration::from_secs_f64(self.sim.t() / pace);
        loop {
            let now = Instant::now();
            if now >= due {
                return;
            }
            match self.control.recv_timeout(due - now) {
                Ok(msg) => self.handle(msg),
                Err(RecvTimeoutError::Timeout) => return,
                Err(RecvTimeoutError::Disconnected) => {
                    std::thread::sleep(due.saturating_duration_since(Instant::now()));
                    return;
                }
            }
        }
    }

    fn run(mut self) -> RunSummary {
        let start = Instant::now();
        loop {
            self.drain();
            let more = self.sim.step(&mut self.sink);
            {
                let mut p = self.progress.lock().expect("progress lock");
                p.0.tick = self.sim.tick();
                p.0.t = self.sim.t();
            }
            if !more {
                break;
            }
            self.throttle(start);
        }
        let summary = self.sim.summary().cloned().expect("finished runs carry a summary");
        if let Err(e) = self.persist(&summary) {
            eprintln!("run files in {} incomplete: {e}", self.dir.display());
        }
        self.progress.lock().expect("progress lock").0.status = summary.end.into();
        // Anything still queued arrived too late.
        while let Ok(Control::Command(_, _, reply)) = self.control.try_recv() {
            let _ = reply.send(Err(SubmitError::Finished));
        }
        summary
    }

    fn persist(&mut self, summary: &RunSummary) -> io::Result<()> {
        if let Some(events) = self.sink.events.take() {
            events.finish()?;
        }
        if let Some(e) = self.sink.fleet_error.take() {
            return Err(e);
        }
        self.sink.fleet.flush()?;
        let json = serde_json::to_string_pretty(summary).map_err(io::Error::other)?;
        fs::write(self.dir.join(SUMMARY_FILE), json)
    }
}
