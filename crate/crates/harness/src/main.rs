use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dpc_core::deepc::Controller;
use dpc_harness::collect::{cmd_collect, load_datasets};
use dpc_harness::compare::compare;
use dpc_harness::mission::{metrics, run, write_run, MissionFile};
use dpc_harness::plotdata::cmd_plotdata;
use dpc_harness::{Overrides, Scenario};

/// Multi-agent data-driven predictive control experiments.
///
/// Log verbosity follows RUST_LOG (default `info`).
#[derive(Parser, Debug)]
#[command(name = "dpc", version)]
struct Cli {
    /// Override both the data-collection and the Monte Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Primal and dual tolerance of the QP solver.
    #[arg(long, global = true)]
    solver_eps: Option<f64>,
    /// Convex solves per control step.
    #[arg(long, global = true)]
    scp_iters: Option<usize>,
    /// Always solve with softened collision constraints.
    #[arg(long, global = true)]
    soft_collisions: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ControllerArg {
    Deepc,
    ModelMpc,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Collect one dataset per agent and report trajectory-matrix norms.
    Collect {
        /// Scenario file, or `cube8` for the bundled one.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Also inject the same excitation without feedback and report its norms.
        #[arg(long)]
        open_loop: bool,
    },
    /// Run the closed-loop mission. Exits with status 2 if a hard invariant breaks.
    Run {
        #[arg(long)]
        scenario: String,
        /// Directory written by `collect`; required for the data-driven controller.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "deepc")]
        controller: ControllerArg,
    },
    /// Per-step input and output differences between two `mission.json` files.
    Compare {
        log_a: PathBuf,
        log_b: PathBuf,
        /// Write the per-step table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready CSVs from a `mission.json`.
    Plotdata {
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let overrides =
        Overrides { seed: cli.seed, solver_eps: cli.solver_eps, scp_iters: cli.scp_iters, soft_collisions: cli.soft_collisions };
    match cli.cmd {
        Cmd::Collect { scenario, out, open_loop } => {
            let s = Scenario::resolve(&scenario, &overrides).with_context(|| format!("loading {scenario}"))?;
            let r = cmd_collect(&s, &out, open_loop)?;
            println!("agent  rows  cols  |W|_2         |W|_inf       open |W|_2    open |W|_inf");
            for a in &r.agents {
                let o = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6e}"));
                println!(
                    "{:>5}  {:>4}  {:>4}  {:.6e}  {:.6e}  {:>12}  {:>12}",
                    a.agent,
                    a.rows,
                    a.cols,
                    a.norm_2,
                    a.norm_inf,
                    o(a.open_loop_norm_2),
                    o(a.open_loop_norm_inf)
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run { scenario, data, out, controller } => {
            let s = Scenario::resolve(&scenario, &overrides).with_context(|| format!("loading {scenario}"))?;
            let controller = match controller {
                ControllerArg::Deepc => Controller::Deepc,
                ControllerArg::ModelMpc => Controller::ModelMpc,
            };
            let datasets = match &data {
                Some(dir) => Some(load_datasets(&s, dir)?),
                None => None,
            };
            let mf = run(&s, datasets.as_deref(), controller)?;
            let m = metrics(&s, &mf, datasets.as_deref())?;
            let summary = write_run(&s, &mf, &m, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary.metrics)?);
            if summary.violations.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &summary.violations {
                    eprintln!("violation: {v}");
                }
                Ok(ExitCode::from(2))
            }
        }
        Cmd::Compare { log_a, log_b, out } => {
            let a = MissionFile::read(&log_a)?;
            let b = MissionFile::read(&log_b)?;
            let c = compare(&a, &b)?;
            if let Some(path) = out {
                c.table.write(&path)?;
            }
            println!("{}", serde_json::to_string_pretty(&c)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Plotdata { log, out } => {
            cmd_plotdata(&MissionFile::read(&log)?, &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
