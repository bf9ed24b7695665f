use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use auvfleet_gateway::{Gateway, GatewayConfig};

mod output;
mod replay;

#[derive(Parser)]
#[command(name = "auvfleet", version, about = "Simulate a small fleet of acoustically linked AUVs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and write its outputs.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `auvfleet-out/<name>-<seed>`.
        #[arg(long, env = "AUVFLEET_OUT")]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        /// Pace runs at one sim second per wall second unless a run asks
        /// for another pace.
        #[arg(long)]
        realtime: bool,
        /// Scenario files to offer at startup.
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
        /// Where uploaded scenarios and run directories live.
        #[arg(long, env = "AUVFLEET_DATA", default_value = "auvfleet-data")]
        data_dir: PathBuf,
    },
    /// Re-derive fleet updates from a run's event log and compare them with
    /// the recorded ones.
    Replay {
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { scenario, seed, out } => output::run(&scenario, seed, out),
        Command::Serve {
            port,
            bind,
            realtime,
            scenario_dir,
            data_dir,
        } => serve(SocketAddr::new(bind, port), realtime, scenario_dir, data_dir),
        Command::Replay { run_dir } => replay::replay(&run_dir),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn serve(addr: SocketAddr, realtime: bool, scenario_dir: Option<PathBuf>, data_dir: PathBuf) -> Result<()> {
    let config = GatewayConfig {
        data_dir: data_dir.clone(),
        scenario_dir: scenario_dir.clone(),
        default_pace: realtime.then_some(1.0),
    };
    let gw = Gateway::new(config).with_context(|| match &scenario_dir {
        Some(d) => format!("preparing {} with scenarios from {}", data_dir.display(), d.display()),
        None => format!("preparing {}", data_dir.display()),
    })?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = match tokio::net::TcpListener::bind(addr).await {
            Ok(l) => l,
            Err(e) => bail!("cannot listen on {addr}: {e}"),
        };
        println!("listening on http://{}", listener.local_addr()?);
        auvfleet_gateway::serve(gw, listener, shutdown_signal()).await?;
        println!("stopped");
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}
