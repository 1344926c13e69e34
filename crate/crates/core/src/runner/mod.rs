//! Declarative experiment runner: a config in, a report and files out.

mod config;
mod experiments;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde::Serialize;

pub use config::{Budget, ExperimentConfig, ExperimentKind, Thresholds};
pub use report::{Check, PathDump, Report, Table};

use crate::error::Result;

/// Runs the experiment without touching the file system.
pub fn run(cfg: &ExperimentConfig, dump_paths: bool) -> Result<Report> {
    cfg.validate()?;
    use ExperimentKind::*;
    let outcome = match cfg.experiment {
        ClosedForms => experiments::closed_forms(cfg),
        Scalefn => experiments::scalefn(cfg),
        BrownianBaseline => experiments::brownian_baseline(cfg, dump_paths),
        Arcsine => experiments::arcsine(cfg, dump_paths),
        Meander => experiments::meander(cfg, dump_paths),
        HeightTail => experiments::height_tail(cfg, dump_paths),
        Equivalence => experiments::equivalence(cfg, dump_paths),
        BigJump => experiments::big_jump(cfg, dump_paths),
        DriftProfile => experiments::drift_profile(cfg, dump_paths),
        ConditionedStart => experiments::conditioned_start(cfg, dump_paths),
    }?;
    let mut inputs = cfg.clone();
    // where the output goes does not change what it is
    inputs.out = None;
    let pass = outcome.checks.iter().all(|c| c.pass);
    Ok(Report {
        experiment: cfg.experiment.name().to_string(),
        inputs: serde_json::to_value(&inputs)?,
        estimates: outcome.estimates,
        checks: outcome.checks,
        notes: outcome.notes,
        pass,
        tables: outcome.tables,
        dumps: outcome.dumps,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub seed: u64,
    pub shards: usize,
    pub git_describe: String,
    pub version: String,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
}

/// `git describe --always --dirty`, or `unknown` outside a work tree.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes `summary.json`, one CSV per table, path dumps under
/// `paths/<experiment>/shard-<s>/replica-<r>.csv`, and `manifest.json`.
pub fn write_outputs(report: &Report, cfg: &ExperimentConfig, dir: &Path, wall_time_seconds: f64) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = vec!["summary.json".to_string()];
    fs::write(dir.join("summary.json"), report.to_json()?)?;
    for t in &report.tables {
        let name = format!("{}.csv", t.name);
        fs::write(dir.join(&name), t.to_csv())?;
        files.push(name);
    }
    for d in &report.dumps {
        let rel: PathBuf = ["paths", &report.experiment, &format!("shard-{}", d.shard), &format!("replica-{}.csv", d.replica)]
            .iter()
            .collect();
        fs::create_dir_all(dir.join(rel.parent().expect("nested path")))?;
        fs::write(dir.join(&rel), &d.csv)?;
        files.push(rel.to_string_lossy().replace('\\', "/"));
    }
    let manifest = Manifest {
        experiment: report.experiment.clone(),
        seed: cfg.seed,
        shards: cfg.shards,
        git_describe: git_describe(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds,
        files,
    };
    let value = serde_json::to_value(&manifest)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(manifest)
}

/// Runs, writes everything to `dir`, and reports whether all checks passed.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path, dump_paths: bool) -> Result<Report> {
    let start = Instant::now();
    let report = run(cfg, dump_paths)?;
    write_outputs(&report, cfg, dir, start.elapsed().as_secs_f64())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExperimentInfo {
    pub kind: ExperimentKind,
    /// `;`-separated requirements: `model=<type>`, flags, or `<param><op><value>`.
    pub requires: &'static str,
    pub verifies: &'static str,
}

/// One row per experiment kind.
pub fn list_experiments() -> Vec<ExperimentInfo> {
    use ExperimentKind::*;
    let row = |kind, requires, verifies| ExperimentInfo { kind, requires, verifies };
    vec![
        row(ClosedForms, "model=none", "closed-form excursion tails, Pareto limit law and stable scale function"),
        row(BrownianBaseline, "model=brownian", "Brownian excursion tails n(ζ>t) ∝ t^-1/2 and n(ε̄>x) = 1/x"),
        row(Arcsine, "model=brownian", "last passage time at the infimum follows the arcsine law"),
        row(
            Meander,
            "model=stable;alpha>1",
            "rescaled long excursions converge to the stable meander; P_x(·|τ₀⁻>t) converges to the meander followed by a free stable path",
        ),
        row(
            HeightTail,
            "model=stable;spectrally_positive;alpha>1;alpha<2",
            "spectrally positive: n(ε̄>c(t)) ~ (α-1)Γ(1-ρ) n(ζ>t)",
        ),
        row(
            Equivalence,
            "model=levy;beta_drift>0;jumps=compound_pareto;theta>1",
            "n(ε̄>βt) and n(ζ>t) are asymptotically equivalent as t→∞, both ~ n(ζ)ν̄(βt)",
        ),
        row(
            BigJump,
            "model=levy;beta_drift>0;jumps=compound_pareto;theta>1",
            "under n(·|ζ>t) the big jump converges weakly to the law of independent (𝒯, 𝒫)",
        ),
        row(
            DriftProfile,
            "model=levy;beta_drift>0;jumps=compound_pareto;theta>1",
            "ε_(ts)/t under n(·|ζ>t) converges to (𝒫 - βs) ∨ 0",
        ),
        row(
            ConditionedStart,
            "model=levy;beta_drift>0;jumps=compound_pareto;theta>1;x>0",
            "under P_x(·|τ₀⁻>t) the jump time has the size-biased distribution given by E_x[τ₀⁻∧t]/E_x[τ₀⁻]",
        ),
        row(Scalefn, "model=optional;spectrally_positive", "W from ∫e^{-λx}W(x)dx = 1/ψ(λ); height tail d/dx log W"),
    ]
}

/// Parses a requirements string into tokens, rejecting anything malformed.
pub fn parse_requirements(s: &str) -> std::result::Result<Vec<Requirement>, String> {
    s.split(';')
        .map(|tok| {
            let tok = tok.trim();
            for op in [">=", "<=", ">", "<", "="] {
                if let Some((k, v)) = tok.split_once(op) {
                    if !is_ident(k) || v.is_empty() {
                        return Err(format!("malformed requirement {tok:?}"));
                    }
                    return Ok(Requirement { key: k.to_string(), op: op.to_string(), value: v.to_string() });
                }
            }
            if is_ident(tok) {
                Ok(Requirement { key: tok.to_string(), op: String::new(), value: String::new() })
            } else {
                Err(format!("malformed requirement {tok:?}"))
            }
        })
        .collect()
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Requirement {
    pub key: String,
    /// Empty for a bare flag.
    pub op: String,
    pub value: String,
}
