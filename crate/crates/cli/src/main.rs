use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use excursions::pathsim::Simulator;
use excursions::runner::{self, ExperimentConfig};
use excursions::scalefn::{scale_function, LaplaceExponent, ScaleOptions};
use excursions::RngStream;

#[derive(Parser)]
#[command(name = "excursions", version, about = "Simulate and check excursions of reflected Lévy processes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment and write its report; exits 0 iff every check passes.
    Run(Common),
    /// Show the experiment kinds, what they need and what they verify.
    ListExperiments,
    /// Tabulate the scale function of the configured model.
    Scalefn(Common),
    /// Simulate paths of the configured model and write them as CSV.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    shards: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write simulated paths under `paths/`.
    #[arg(long)]
    dump_paths: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(shards) = self.shards {
            cfg.shards = shards;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| Path::new("out").join(cfg.experiment.name()))
}

fn run(args: &Common) -> Result<bool> {
    let cfg = args.load()?;
    let dir = out_dir(&cfg);
    let report = runner::run_to_dir(&cfg, &dir, args.dump_paths)?;
    for c in &report.checks {
        println!("{}", c.describe());
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    println!("{} {} -> {}", if report.pass { "PASS" } else { "FAIL" }, report.experiment, dir.display());
    Ok(report.pass)
}

fn list() -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "kind\trequires\tverifies")?;
    for row in runner::list_experiments() {
        writeln!(out, "{}\t{}\t{}", row.kind.name(), row.requires, row.verifies)?;
    }
    Ok(())
}

fn scalefn(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let Some(model) = cfg.model else { bail!("scalefn needs a [model] section") };
    let [lo, hi, n] = cfg.thresholds.grid.unwrap_or([0.1, 10.0, 41.0]);
    let n = n as usize;
    let grid: Vec<f64> = (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect();
    let table = scale_function(&LaplaceExponent::from_spec(&model)?, &grid, ScaleOptions::default())?;
    match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            table.write_csv(std::fs::File::create(dir.join("scale_function.csv"))?)?;
        }
        None => table.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn simulate(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let Some(model) = cfg.model else { bail!("simulate needs a [model] section") };
    let dt = cfg.budget.dt.unwrap_or(1e-3);
    let horizon = cfg.budget.horizon.unwrap_or(1.0);
    let replicas = cfg.budget.replicas.unwrap_or(1);
    let sim = Simulator::new(&model, dt, cfg.budget.cutoff)?;
    let start = Instant::now();
    let Some(dir) = &cfg.out else {
        let path = sim.path(horizon, 0.0, &mut RngStream::new(cfg.seed, 0).substream(0))?;
        path.write_csv(std::io::stdout().lock())?;
        return Ok(());
    };
    for i in 0..replicas {
        let s = i % cfg.shards;
        let path = sim.path(horizon, 0.0, &mut RngStream::new(cfg.seed, s as u64).substream(i as u64))?;
        let sub = dir.join("paths").join("simulate").join(format!("shard-{s}"));
        std::fs::create_dir_all(&sub)?;
        path.write_csv(std::fs::File::create(sub.join(format!("replica-{i}.csv")))?)?;
    }
    eprintln!("{replicas} paths in {:.2}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Run(args) => run(args).map(|pass| if pass { ExitCode::SUCCESS } else { ExitCode::from(1) }),
        Cmd::ListExperiments => list().map(|_| ExitCode::SUCCESS),
        Cmd::Scalefn(args) => scalefn(args).map(|_| ExitCode::SUCCESS),
        Cmd::Simulate(args) => simulate(args).map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
