use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dkf_core::design::{
    centralized_design_search, default_certificate, verify_pbar, DesignCertificate, DesignOptions,
};
use dkf_core::io::{read_network, read_pbar_dir};
use dkf_core::network::validate_assumptions;
use dkf_core::pnp::{evaluate_event, PnPEvent};
use dkf_core::riccati::PSD_TOL;
use dkf_core::sim::export::write_bundle;
use dkf_core::sim::metrics::window_mean;
use dkf_core::sim::{simulate, Scenario};
use dkf_core::{DkfError, NetworkModel};

/// Exit code of a check that ran but did not pass.
const CHECK_FAILED: u8 = 2;
/// Exit code of usage, parse and I/O errors.
const USAGE: u8 = 1;

#[derive(Parser)]
#[command(
    name = "dkf",
    version,
    about = "Partition-based distributed Kalman filter toolkit"
)]
struct Cli {
    /// Network JSON (scenario JSON for `simulate`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// PSD tolerance of `verify-pbar`.
    #[arg(long, global = true, default_value_t = PSD_TOL)]
    tol: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Checks invertibility, detectability and stabilizability per subsystem.
    Validate,
    /// Computes a small-gain certificate for the network.
    Design {
        /// Search over gain multipliers and transforms instead of the
        /// default design.
        #[arg(long)]
        search: bool,
        /// Gap between the envelope rate and the local spectral radius.
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Runs a scenario and writes the CSV bundle and a summary.
    Simulate {
        /// First step of the averaging window.
        #[arg(long, default_value_t = 30)]
        window_start: usize,
        /// Last step of the averaging window (defaults to the horizon).
        #[arg(long)]
        window_end: Option<usize>,
    },
    /// Checks `Pbar_<id>.mat` covariance bounds against the network.
    VerifyPbar {
        /// Directory holding the `Pbar_<id>.mat` files.
        #[arg(long)]
        pbar: PathBuf,
    },
    /// Evaluates the admission test of a plug-and-play event.
    PnpCheck {
        /// Event JSON.
        #[arg(long)]
        event: PathBuf,
        #[arg(long)]
        search: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Malformed input is a usage error; a model that loads but violates an
/// assumption fails the check.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<DkfError>() {
        Some(DkfError::Io(_) | DkfError::Json(_) | DkfError::Parse(_) | DkfError::Csv(_))
        | None => USAGE,
        Some(
            DkfError::DimensionMismatch(_)
            | DkfError::DuplicateSubsystem(_)
            | DkfError::DanglingCoupling { .. },
        ) => USAGE,
        Some(DkfError::InvalidScenario(_)) => USAGE,
        Some(_) => CHECK_FAILED,
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let config = cli.config.as_deref().context("--config is required")?;
    match &cli.command {
        Command::Validate => cmd_validate(&load_network(config)?),
        Command::Design { search, margin } => {
            let mut opts = DesignOptions::default();
            if let Some(m) = margin {
                opts.margin = *m;
            }
            cmd_design(&load_network(config)?, &opts, *search, cli.out.as_deref())
        }
        Command::Simulate {
            window_start,
            window_end,
        } => {
            let text = fs::read_to_string(config)
                .map_err(DkfError::from)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut sc = Scenario::from_json(&text)
                .with_context(|| format!("loading scenario {}", config.display()))?;
            if let Some(seed) = cli.seed {
                sc.seed = seed;
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            cmd_simulate(&sc, &out, *window_start, window_end.unwrap_or(sc.horizon))
        }
        Command::VerifyPbar { pbar } => {
            cmd_verify_pbar(&load_network(config)?, pbar, cli.tol, cli.out.as_deref())
        }
        Command::PnpCheck { event, search } => {
            let text = fs::read_to_string(event)
                .map_err(DkfError::from)
                .with_context(|| format!("reading {}", event.display()))?;
            let event: PnPEvent = serde_json::from_str(&text)
                .map_err(DkfError::from)
                .with_context(|| format!("parsing event {}", event.display()))?;
            cmd_pnp_check(&load_network(config)?, &event, *search, cli.out.as_deref())
        }
    }
}

fn load_network(path: &Path) -> Result<NetworkModel> {
    read_network(path).with_context(|| format!("loading network {}", path.display()))
}

/// Writes `value` as pretty JSON to `dir/name`, or to stdout without `dir`.
fn emit_json<T: serde::Serialize>(value: &T, dir: Option<&Path>, name: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(DkfError::from)?;
            fs::write(dir.join(name), text + "\n").map_err(DkfError::from)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_validate(network: &NetworkModel) -> Result<bool> {
    let report = validate_assumptions(network)?;
    println!(
        "{:>4} {:>12} {:>10} {:>10} {:>12} {:>17} {:>19}",
        "id",
        "cond(A_ii)",
        "invertible",
        "detectable",
        "stabilizable",
        "scaled detectable",
        "scaled stabilizable"
    );
    for s in &report.subsystems {
        println!(
            "{:>4} {:>12.4e} {:>10} {:>10} {:>12} {:>17} {:>19}",
            s.id,
            s.condition_number,
            s.invertible,
            s.detectable,
            s.stabilizable,
            s.scaled_detectable,
            s.scaled_stabilizable
        );
    }
    for s in report.subsystems.iter().filter(|s| !s.all_pass()) {
        println!("subsystem {} fails: {}", s.id, s.failures().join(", "));
    }
    let pass = report.all_pass();
    println!(
        "{}",
        if pass {
            "all assumptions hold"
        } else {
            "assumptions violated"
        }
    );
    Ok(pass)
}

fn summarize(cert: &DesignCertificate) -> String {
    let rho: Vec<String> = cert
        .subsystems
        .iter()
        .zip(&cert.rho)
        .map(|(l, r)| format!("{}:{r:.6}", l.id))
        .collect();
    format!(
        "sigma(Gamma) = {:.6}\nrho = [{}]\ncertified = {} (distributed check {})",
        cert.spectral_radius,
        rho.join(", "),
        cert.global_ok,
        cert.distributed_ok
    )
}

fn cmd_design(
    network: &NetworkModel,
    opts: &DesignOptions,
    search: bool,
    out: Option<&Path>,
) -> Result<bool> {
    let cert = if search {
        centralized_design_search(network, opts)?
    } else {
        default_certificate(network, opts)?
    };
    emit_json(&cert, out, "certificate.json")?;
    if out.is_some() {
        println!("{}", summarize(&cert));
    } else {
        eprintln!("{}", summarize(&cert));
    }
    Ok(cert.global_ok)
}

fn cmd_simulate(sc: &Scenario, out: &Path, from: usize, to: usize) -> Result<bool> {
    let res = simulate(sc)?;
    write_bundle(&res, out)?;
    let mean = |series: Option<Vec<f64>>| series.and_then(|e| window_mean(&e, from, to));
    let summary = serde_json::json!({
        "steps": res.records.len(),
        "window": [from, to],
        "mean_e_dkf": mean(res.e_dkf()),
        "mean_e_central": mean(res.e_central()),
        "mean_e_simplified": mean(res.e_simplified()),
        "events": res.decisions.len(),
        "denied": res.decisions.iter().filter(|d| !d.decision.accepted).count(),
        "halted_at": res.halted_at,
        "warnings": res.warnings,
    });
    emit_json(&summary, Some(out), "summary.json")?;
    let show = |v: &serde_json::Value| v.as_f64().map_or("-".to_string(), |x| format!("{x:.6}"));
    println!("steps {}, window {from}..={to}", res.records.len());
    println!("mean e dkf {}", show(&summary["mean_e_dkf"]));
    println!("mean e central {}", show(&summary["mean_e_central"]));
    for d in &res.decisions {
        println!(
            "t={} {} {}: accepted={} applied={}{}",
            d.time,
            d.decision.event,
            d.decision.subsystem,
            d.decision.accepted,
            d.applied,
            if d.decision.reasons.is_empty() {
                String::new()
            } else {
                format!(" ({})", d.decision.reason_text())
            }
        );
    }
    if let Some(t) = res.halted_at {
        println!("halted at step {t}");
    }
    Ok(res.halted_at.is_none())
}

fn cmd_verify_pbar(
    network: &NetworkModel,
    dir: &Path,
    tol: f64,
    out: Option<&Path>,
) -> Result<bool> {
    let pbars = read_pbar_dir(dir, network)
        .with_context(|| format!("loading covariance bounds from {}", dir.display()))?;
    let report = verify_pbar(network, &pbars, tol)?;
    for c in &report.subsystems {
        println!(
            "subsystem {}: margin {:.6e} {}",
            c.id,
            c.margin,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    println!("sigma(A - L C) = {:.6}", report.closed_loop_radius);
    println!("{}", if report.passed { "pass" } else { "fail" });
    if out.is_some() {
        emit_json(&report, out, "pbar_report.json")?;
    }
    Ok(report.passed)
}

fn cmd_pnp_check(
    network: &NetworkModel,
    event: &PnPEvent,
    search: bool,
    out: Option<&Path>,
) -> Result<bool> {
    let opts = DesignOptions::default();
    let cert = if search {
        centralized_design_search(network, &opts)?
    } else {
        default_certificate(network, &opts)?
    };
    let decision = evaluate_event(network, &cert, &event.kind, &opts)?;
    emit_json(&decision, out, "decision.json")?;
    let verdict = if decision.accepted {
        "accepted"
    } else {
        "denied"
    };
    let line = format!("{} {}: {verdict}", decision.event, decision.subsystem);
    if out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    for r in &decision.reasons {
        eprintln!("  {r}");
    }
    Ok(decision.accepted)
}
