//! CSV output of a simulation run.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::riccati::Mat;
use crate::sim::SimResult;

/// Shortest-free scientific form with 17 significant digits, so values
/// read back bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Row-major entries joined with `;`.
pub fn fmt_mat(m: &Mat) -> String {
    m.row_iter()
        .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
        .map(fmt_f64)
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_trajectories<W: Write>(result: &SimResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "step",
        "subsystem",
        "component",
        "x",
        "xhat_dkf",
        "xhat_central",
    ])?;
    for r in &result.records {
        for (&id, x) in &r.x {
            let dkf = r.dkf.as_ref().and_then(|s| s.get(&id)).map(|s| &s.xhat);
            let central = r.central.as_ref().and_then(|s| s.get(&id));
            for k in 0..x.len() {
                w.write_record([
                    r.step.to_string(),
                    id.to_string(),
                    k.to_string(),
                    fmt_f64(x[k]),
                    fmt_opt(dkf.map(|v| v[k])),
                    fmt_opt(central.map(|v| v[k])),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_errors<W: Write>(result: &SimResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "e_dkf", "e_central"])?;
    let dkf = result.e_dkf();
    let central = result.e_central();
    for (k, r) in result.records.iter().enumerate() {
        w.write_record([
            r.step.to_string(),
            fmt_opt(dkf.as_ref().map(|e| e[k])),
            fmt_opt(central.as_ref().map(|e| e[k])),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_covariance<W: Write>(result: &SimResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "subsystem", "P"])?;
    for r in &result.records {
        if let Some(states) = &r.dkf {
            for (id, s) in states {
                w.write_record([r.step.to_string(), id.to_string(), fmt_mat(&s.p)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_decisions<W: Write>(result: &SimResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "time",
        "kind",
        "subsystem",
        "accepted",
        "applied",
        "reasons",
        "warnings",
    ])?;
    for d in &result.decisions {
        w.write_record([
            d.time.to_string(),
            d.decision.event.clone(),
            d.decision.subsystem.to_string(),
            d.decision.accepted.to_string(),
            d.applied.to_string(),
            d.decision.reasons.join("; "),
            d.decision.warnings.join("; "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `trajectories.csv`, `errors.csv`, `covariance.csv` and
/// `decisions.csv` into `dir`.
pub fn write_bundle(result: &SimResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trajectories(result, File::create(dir.join("trajectories.csv"))?)?;
    write_errors(result, File::create(dir.join("errors.csv"))?)?;
    write_covariance(result, File::create(dir.join("covariance.csv"))?)?;
    write_decisions(result, File::create(dir.join("decisions.csv"))?)?;
    Ok(())
}
