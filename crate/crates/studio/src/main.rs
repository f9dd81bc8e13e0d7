use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use icpl_core::icpl::store::to_report_json;
use icpl_core::icpl::{IcplConfig, SessionStore};
use icpl_studio::runs::{read_json, run_baseline, run_proxy, Algorithm, BaselineRunConfig};
use icpl_studio::{export_report, Studio};

#[derive(Parser)]
#[command(name = "icpl", version, about = "Preference-driven reward program search")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run proxy-mode sessions unattended and print the batch report.
    RunProxy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Also run the same seeds without feedback.
        #[arg(long)]
        compare_open_loop: bool,
        /// Directory for sessions and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a preference-learning baseline against an oracle teacher.
    RunBaseline {
        algorithm: Algorithm,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
    /// Print the report of a finished session.
    Report {
        /// Session id under the data directory, or a session directory.
        #[arg(long)]
        session: String,
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
    /// Run the test suites of this workspace.
    Verify {
        /// Only the acceptance checks.
        #[arg(long)]
        acceptance_only: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn session_dir(data: &Path, session: &str) -> anyhow::Result<PathBuf> {
    let under_data = data.join("sessions").join(session);
    if under_data.join("state.json").is_file() {
        return Ok(under_data);
    }
    let direct = PathBuf::from(session);
    if direct.join("state.json").is_file() {
        return Ok(direct);
    }
    bail!("no session `{session}` under {}", data.display())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Cmd::RunProxy {
            config,
            runs,
            compare_open_loop,
            out,
        } => {
            let cfg: IcplConfig = read_json(&config)?;
            let report = run_proxy(&cfg, runs, compare_open_loop, out.as_deref())?;
            print!("{}", to_report_json(&report)?);
        }
        Cmd::RunBaseline {
            algorithm,
            config,
            budget,
            out,
        } => {
            let cfg: BaselineRunConfig = read_json(&config)?;
            let report = run_baseline(algorithm, &cfg, budget, out.as_deref())?;
            print!("{}", to_report_json(&report)?);
        }
        Cmd::Serve { port, data } => {
            let studio = Arc::new(Studio::open(&data)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
                    .await
                    .with_context(|| format!("binding port {port}"))?;
                eprintln!("serving {} on port {port}", data.display());
                icpl_studio::http::serve(studio, listener).await?;
                anyhow::Ok(())
            })?;
        }
        Cmd::Report { session, data } => {
            let store = SessionStore::new(session_dir(&data, &session)?)?;
            print!("{}", export_report(&store)?);
        }
        Cmd::Verify { acceptance_only } => {
            let workspace = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
            let mut cmd = Command::new(std::env::var("CARGO").unwrap_or_else(|_| "cargo".into()));
            cmd.current_dir(&workspace).arg("test");
            if acceptance_only {
                cmd.args(["-p", "icpl-core", "--test", "acceptance", "--", "--nocapture"]);
            } else {
                cmd.arg("--workspace");
            }
            let status = cmd.status().context("running cargo test")?;
            return Ok(if status.success() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
    }
    Ok(ExitCode::SUCCESS)
}
