//! The ten experiment kinds.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{config, Error, Result};
use crate::excursion::{last_passage_at_infimum, Excursion, ExcursionEnsemble, TraceSpec};
use crate::levy_model::{
    brownian_excursion_tails, height_lifetime_ratio_constant, nu_bar, pareto_limit_cdf, stable_height_tail,
    stable_lifetime_tail, JumpLaw, LevyModel, ProcessSpec, StableParams,
};
use crate::measure_est::{
    collect_ensemble, conditional_tail_ratio, estimate_n_zeta, extract_meander, measure_ratio, n_zeta_per_local_time,
    sample_conditioned_batch, sample_t_x, CollectPlan, Condition, ConditionedPlan, ConditionedSampler, Continuation,
    Estimate, Event, PassagePlan, SizeBiasedSampler,
};
use crate::pathsim::{Path, Simulator, StableSampler};
use crate::rng::RngStream;
use crate::scalefn::{height_tail_from_w, scale_function, LaplaceExponent, ScaleOptions};
use crate::stats::{
    correlation, hill_estimator, ks_two_sample, ks_vs_cdf, mean, slope_fit, EmpiricalDistribution,
};

use super::config::{heavy_tailed_negative_drift, ExperimentConfig};
use super::report::{Check, PathDump, Table};

#[derive(Debug, Default)]
pub(crate) struct Outcome {
    pub estimates: Vec<Estimate>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub tables: Vec<Table>,
    pub dumps: Vec<PathDump>,
}

/// Independent draws for comparison samples use shard indices far from the
/// ones used by simulation workers.
const AUX_SHARD: u64 = 1 << 40;

fn spec(cfg: &ExperimentConfig) -> Result<ProcessSpec> {
    cfg.model.ok_or_else(|| config("missing [model] section"))
}

fn levels(cfg: &ExperimentConfig, default: &[f64]) -> Vec<f64> {
    cfg.thresholds.t.clone().unwrap_or_else(|| default.to_vec())
}

fn cap_factor(cfg: &ExperimentConfig) -> f64 {
    cfg.budget.cap_factor.unwrap_or(100.0)
}

fn dump_limit(cfg: &ExperimentConfig, dump: bool) -> usize {
    if dump {
        cfg.budget.dump_limit.unwrap_or(4)
    } else {
        0
    }
}

fn ensure_delta(delta: f64, dt: f64) -> Result<()> {
    if delta < dt {
        return Err(config(format!("minimum lifetime delta = {delta} is below dt = {dt}")));
    }
    Ok(())
}

fn empirical(name: &str, xs: impl IntoIterator<Item = f64>) -> Result<EmpiricalDistribution> {
    EmpiricalDistribution::new(xs).map_err(|_| Error::InsufficientData { what: name.into(), have: 0, need: 1 })
}

fn path_csv(path: &Path) -> Result<String> {
    let mut buf = Vec::new();
    path.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV is ASCII"))
}

/// The first `limit` replica paths on `[0, horizon]`, regenerated from their
/// substreams, so they coincide with the paths the experiment used.
fn replica_dumps(sim: &Simulator, horizon: f64, x0: f64, cfg: &ExperimentConfig, replicas: usize, limit: usize) -> Result<Vec<PathDump>> {
    let shards = cfg.shards.max(1);
    (0..limit.min(replicas))
        .map(|i| {
            let s = (i % shards) as u64;
            let mut rng = RngStream::new(cfg.seed, s).substream(i as u64);
            let path = sim.path(horizon, x0, &mut rng)?;
            Ok(PathDump { shard: s, replica: i as u64, csv: path_csv(&path)? })
        })
        .collect()
}

/// A conditioned excursion's trace, in the path CSV layout.
fn excursion_dump(e: &Excursion) -> PathDump {
    let mut csv = String::from("time,value,jump_flag,jump_size\n");
    if let Some(tr) = &e.trace {
        let mut jumps = e.jumps.iter().peekable();
        for (&t, &v) in tr.times.iter().zip(&tr.values) {
            let size = match jumps.peek() {
                Some(j) if j.time == t => jumps.next().map(|j| j.size),
                _ => None,
            };
            let (flag, size) = size.map_or((0, 0.0), |s| (1, s));
            csv.push_str(&format!("{t},{v},{flag},{size}\n"));
        }
    }
    PathDump { shard: e.shard, replica: e.replica, csv }
}

fn summary_table(name: &str, ens: &ExcursionEnsemble, threshold: f64) -> Result<Table> {
    let mut buf = Vec::new();
    ens.write_summary_csv(&mut buf, threshold)?;
    Ok(Table::from_csv(name, &String::from_utf8(buf).expect("CSV is ASCII")))
}

fn conditioned_table(name: &str, label: &str, excursions: &[Excursion], threshold: f64) -> Table {
    let mut t = Table::new(name, &["shard", "replica", "start", "lifetime", "height", "J_time", "J_size", "censored", "condition"]);
    for e in excursions {
        let (jt, js) = e
            .first_big_jump(threshold)
            .map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        t.push([
            e.shard.to_string(),
            e.replica.to_string(),
            e.start_time.to_string(),
            e.lifetime.to_string(),
            e.height.to_string(),
            jt,
            js,
            (e.censored as u8).to_string(),
            label.to_string(),
        ]);
    }
    t
}

/// Empirical CDFs of two samples on the pooled support, thinned to `points`.
fn ecdf_pair(name: &str, labels: [&str; 2], a: &EmpiricalDistribution, b: &EmpiricalDistribution, points: usize) -> Table {
    let mut pooled: Vec<f64> = a.samples().iter().chain(b.samples()).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut t = Table::new(name, &["x", labels[0], labels[1]]);
    let step = (pooled.len() / points.max(1)).max(1);
    for x in pooled.iter().step_by(step) {
        t.push([*x, a.cdf(*x), b.cdf(*x)]);
    }
    t
}

fn ecdf_vs_cdf(name: &str, a: &EmpiricalDistribution, cdf: impl Fn(f64) -> f64, points: usize) -> Table {
    let mut t = Table::new(name, &["x", "empirical", "oracle"]);
    let step = (a.len() / points.max(1)).max(1);
    for x in a.samples().iter().step_by(step) {
        t.push([*x, a.cdf(*x), cdf(*x)]);
    }
    t
}

fn estimate_point(name: String, value: f64, n: usize) -> Estimate {
    Estimate { name, value, ci_lo: value, ci_hi: value, n_samples: n, censored_frac: 0.0 }
}

// ---------------------------------------------------------------------------

pub(crate) fn closed_forms(_cfg: &ExperimentConfig) -> Result<Outcome> {
    const TOL: f64 = 1e-12;
    let sqrt_pi = 1.772_453_850_905_516;
    let gamma_third = 2.678_938_534_707_747_6;
    let stable_w = |alpha: f64, x: f64| -> Result<f64> {
        let p = StableParams::spectrally_positive_unit_laplace(alpha)?;
        let table = scale_function(&LaplaceExponent::from_stable(&p)?, &[x / 4.0, x / 2.0, x, 2.0 * x, 4.0 * x], ScaleOptions::default())?;
        Ok(table.w[2])
    };
    let stable_tail_from_w = |alpha: f64, x: f64| -> Result<f64> {
        let p = StableParams::spectrally_positive_unit_laplace(alpha)?;
        let grid: Vec<f64> = (0..9).map(|i| x * (1.0 + 0.01 * (i as f64 - 4.0))).collect();
        height_tail_from_w(&scale_function(&LaplaceExponent::from_stable(&p)?, &grid, ScaleOptions::default())?, x)
    };
    let cases: Vec<(&str, &str, f64, f64)> = vec![
        ("lifetime_tail_t1_rho0.5", "t^-rho / Gamma(1-rho)", stable_lifetime_tail(1.0, 0.5)?, 1.0 / sqrt_pi),
        ("lifetime_tail_t4_rho0.5", "t^-rho / Gamma(1-rho)", stable_lifetime_tail(4.0, 0.5)?, 0.5 / sqrt_pi),
        ("brownian_lifetime_tail_t1", "t^-1/2 / sqrt(pi/2)", brownian_excursion_tails(1.0, 1.0)?.0, (2.0 / PI).sqrt()),
        ("brownian_height_tail_x1", "1/x", brownian_excursion_tails(1.0, 1.0)?.1, 1.0),
        ("brownian_height_tail_x2", "1/x", brownian_excursion_tails(1.0, 2.0)?.1, 0.5),
        ("stable_height_tail_x2_alpha1.5", "(alpha-1)/x", stable_height_tail(2.0, 1.5)?, 0.25),
        ("stable_height_tail_x1_alpha2", "(alpha-1)/x", stable_height_tail(1.0, 2.0)?, 1.0),
        ("pareto_limit_cdf_2beta", "1 - (x/beta)^-theta", pareto_limit_cdf(2.0, 1.0, 1.5), 1.0 - 2f64.powf(-1.5)),
        ("pareto_limit_cdf_beta", "0 at x = beta", pareto_limit_cdf(1.0, 1.0, 1.5), 0.0),
        ("pareto_nu_bar_x4", "rate (x/scale)^-theta", nu_bar(&JumpLaw::pareto(1.0, 1.0, 1.5), 4.0)?, 0.125),
        ("ratio_constant_alpha2", "(alpha-1) Gamma(1-1/alpha)", height_lifetime_ratio_constant(2.0)?, sqrt_pi),
        ("ratio_constant_alpha1.5", "(alpha-1) Gamma(1-1/alpha)", height_lifetime_ratio_constant(1.5)?, 0.5 * gamma_third),
        ("stable_w_x1_alpha1.5", "x^(alpha-1) / Gamma(alpha)", stable_w(1.5, 1.0)?, 2.0 / sqrt_pi),
        ("stable_w_x3_alpha2", "x^(alpha-1) / Gamma(alpha)", stable_w(2.0, 3.0)?, 3.0),
        ("height_tail_from_w_x2_alpha1.5", "(alpha-1)/x", stable_tail_from_w(1.5, 2.0)?, 0.25),
        ("height_tail_from_w_x1_alpha2", "(alpha-1)/x", stable_tail_from_w(2.0, 1.0)?, 1.0),
    ];
    let mut out = Outcome::default();
    let mut table = Table::new("oracles", &["name", "value", "expected", "error"]);
    for (name, formula, value, expected) in cases {
        // relative error, absolute where the expected value is 0
        let err = if expected == 0.0 { value.abs() } else { (value / expected - 1.0).abs() };
        table.push([name.to_string(), value.to_string(), expected.to_string(), err.to_string()]);
        out.checks.push(Check::at_most(name, "literal constant", formula, err, TOL));
    }
    out.tables.push(table);
    Ok(out)
}

/// `W` of the Cramér–Lundberg model `ψ(λ) = βλ + r m²λ²/(1+mλ)`.
fn cramer_lundberg_w(beta: f64, rate: f64, mean: f64, x: f64) -> f64 {
    let a = beta / (mean * (beta + rate * mean));
    (1.0 - rate * mean / (beta + rate * mean) * (-a * x).exp()) / beta
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn max_rel_error(w: &[f64], exact: impl Fn(usize) -> f64) -> f64 {
    w.iter().enumerate().map(|(i, v)| (v / exact(i) - 1.0).abs()).fold(0.0, f64::max)
}

pub(crate) fn scalefn(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let opts = ScaleOptions::default();
    let grid = log_grid(0.1, 10.0, 41);

    let brownian = LaplaceExponent::from_model(&LevyModel::new(0.0, 2f64.sqrt(), JumpLaw::none())?)?;
    let w = scale_function(&brownian, &grid, opts)?;
    let err = max_rel_error(&w.w, |i| grid[i]);
    out.checks.push(Check::at_most(
        "inversion_psi_lambda_squared",
        "W(x) = x",
        "Laplace transform of W is 1/psi",
        err,
        1e-6,
    ));

    let (beta, rate, m) = (0.25, 1.0, 2.0);
    let cl = LaplaceExponent::from_model(&LevyModel::new(beta, 0.0, JumpLaw::exponential(rate, m))?)?;
    let w = scale_function(&cl, &grid, opts)?;
    let err = max_rel_error(&w.w, |i| cramer_lundberg_w(beta, rate, m, grid[i]));
    out.checks.push(Check::at_most(
        "inversion_cramer_lundberg",
        "partial-fraction closed form",
        "Laplace transform of W is 1/psi",
        err,
        1e-6,
    ));
    let mut t = Table::new("cramer_lundberg", &["x", "W", "exact"]);
    for (x, v) in grid.iter().zip(&w.w) {
        t.push([*x, *v, cramer_lundberg_w(beta, rate, m, *x)]);
    }
    out.tables.push(t);

    // a faster-decaying exponential term sits near the f64 ceiling of the method
    let (beta2, rate2, m2) = (0.5, 1.0, 1.0);
    let cl2 = LaplaceExponent::from_model(&LevyModel::new(beta2, 0.0, JumpLaw::exponential(rate2, m2))?)?;
    let err2 = max_rel_error(&scale_function(&cl2, &grid, opts)?.w, |i| cramer_lundberg_w(beta2, rate2, m2, grid[i]));
    out.estimates.push(estimate_point(
        format!("max relative error of W, Cramér–Lundberg beta={beta2} rate={rate2} mean={m2}"),
        err2,
        grid.len(),
    ));

    let alpha = 1.5;
    let stable = LaplaceExponent::from_stable(&StableParams::spectrally_positive_unit_laplace(alpha)?)?;
    let big = log_grid(10.0, 100.0, 21);
    let w = scale_function(&stable, &big, ScaleOptions { force_numeric: true, ..opts })?;
    let logx: Vec<f64> = big.iter().map(|x| x.ln()).collect();
    let logw: Vec<f64> = w.w.iter().map(|v| v.ln()).collect();
    let fit = slope_fit(&logx, &logw, (f64::NEG_INFINITY, f64::INFINITY))?;
    out.checks.push(Check::within(
        "stable_w_log_slope",
        "alpha - 1",
        "W regularly varying with index alpha - 1",
        fit.slope,
        alpha - 1.0,
        0.05,
    ));
    let mut t = Table::new("stable_w", &["x", "W_numeric", "W_exact", "x_height_tail"]);
    let c = 1.0 / statrs::function::gamma::gamma(alpha);
    for (i, x) in big.iter().enumerate() {
        let xh = w.height_tail[i].map(|h| (x * h).to_string()).unwrap_or_default();
        t.push([x.to_string(), w.w[i].to_string(), (c * x.powf(alpha - 1.0)).to_string(), xh]);
    }
    out.tables.push(t);

    if let Some(spec) = &cfg.model {
        let [lo, hi, n] = cfg.thresholds.grid.unwrap_or([0.1, 10.0, 41.0]);
        let exponent = LaplaceExponent::from_spec(spec)?;
        let table = scale_function(&exponent, &log_grid(lo, hi, n as usize), opts)?;
        let mut buf = Vec::new();
        table.write_csv(&mut buf)?;
        out.tables.push(Table::from_csv("scale_function", &String::from_utf8(buf).expect("CSV is ASCII")));
    }
    Ok(out)
}

pub(crate) fn brownian_baseline(cfg: &ExperimentConfig, dump: bool) -> Result<Outcome> {
    let spec = spec(cfg)?;
    let ts = levels(cfg, &[1.0, 4.0]);
    let xs = cfg.thresholds.heights.clone().unwrap_or_else(|| vec![1.0, 2.0]);
    if ts.len() != 2 || xs.len() != 2 {
        return Err(config("brownian_baseline needs two lifetime levels and two height levels"));
    }
    let dt = cfg.budget.dt.unwrap_or(1e-4);
    let horizon = cfg.budget.horizon.unwrap_or(10.0);
    let replicas = cfg.budget.replicas.unwrap_or(1800);
    let delta = cfg.thresholds.delta.unwrap_or(100.0 * dt);
    ensure_delta(delta, dt)?;
    let mut plan = CollectPlan::new(horizon, dt, replicas, delta);
    plan.zero_tol = cfg.thresholds.zero_tol;
    plan.resolve_lifetime = ts[1];
    plan.resolve_height = xs[1];
    plan.extension_cap = cap_factor(cfg) * ts[1];
    let ens = collect_ensemble(&spec, &plan, cfg.seed, cfg.shards)?;

    let mut out = Outcome::default();
    out.checks.push(Check::at_least(
        "detected_excursions",
        "budget",
        "excursions of the reflected path",
        ens.len() as f64,
        3e4,
    ));
    let life = measure_ratio(&ens, &Event::LifetimeAbove(ts[1]), &Event::LifetimeAbove(ts[0]))?;
    let target = (ts[0] / ts[1]).sqrt();
    out.checks.push(Check::within(
        "lifetime_tail_ratio",
        "n(ζ>t) = t^-1/2 / sqrt(pi/2)",
        "Brownian excursion tails are given explicitly",
        life.value,
        target,
        0.05 * target,
    ));
    let height = measure_ratio(&ens, &Event::HeightAbove(xs[1]), &Event::HeightAbove(xs[0]))?;
    let target = xs[0] / xs[1];
    out.checks.push(Check::within(
        "height_tail_ratio",
        "n(ε̄>x) = 1/x",
        "Brownian excursion tails are given explicitly",
        height.value,
        target,
        0.05 * target,
    ));
    out.estimates.extend([life, height]);

    let mut curves = Table::new("tail_curves", &["kind", "level", "ratio", "oracle"]);
    for i in 0..=20 {
        let s = ts[0] * (ts[1] / ts[0]).powf(i as f64 / 10.0);
        if let Ok(r) = measure_ratio(&ens, &Event::LifetimeAbove(s), &Event::LifetimeAbove(ts[0])) {
            curves.push(["lifetime".to_string(), s.to_string(), r.value.to_string(), (ts[0] / s).sqrt().to_string()]);
        }
        let x = xs[0] * (xs[1] / xs[0]).powf(i as f64 / 10.0);
        if let Ok(r) = measure_ratio(&ens, &Event::HeightAbove(x), &Event::HeightAbove(xs[0])) {
            curves.push(["height".to_string(), x.to_string(), r.value.to_string(), (xs[0] / x).to_string()]);
        }
    }
    out.tables.push(curves);
    out.tables.push(summary_table("excursions", &ens, f64::INFINITY)?);
    out.notes.push(format!(
        "{} excursions with lifetime >= {delta}, censored fraction {:.2e}",
        ens.len(),
        ens.censored_fraction()
    ));
    let sim = Simulator::new(&spec, dt, None)?;
    out.dumps = replica_dumps(&sim, horizon, 0.0, cfg, replicas, dump_limit(cfg, dump))?;
    Ok(out)
}

fn arcsine_cdf(s: f64) -> f64 {
    2.0 / PI * s.clamp(0.0, 1.0).sqrt().asin()
}

pub(crate) fn arcsine(cfg: &ExperimentConfig, dump: bool) -> Result<Outcome> {
    let spec = spec(cfg)?;
    let t = levels(cfg, &[1.0])[0];
    let dt = cfg.budget.dt.unwrap_or(1e-4);
    let replicas = cfg.budget.replicas.unwrap_or(10_000);
    let sim = Simulator::new(&spec, dt, None)?;
    let shards = cfg.shards.max(1);
    let per_shard: Vec<Result<Vec<(usize, f64)>>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let base = RngStream::new(cfg.seed, s as u64);
            (s..replicas)
                .step_by(shards)
                .map(|i| {
                    let mut rng = base.substream(i as u64);
                    let path = sim.path(t, 0.0, &mut rng)?;
                    Ok((i, last_passage_at_infimum(&path, t, 0.0)? / t))
                })
                .collect()
        })
        .collect();
    let mut g = Vec::with_capacity(replicas);
    for part in per_shard {
        g.extend(part?);
    }
    g.sort_by_key(|p| p.0);
    let g: Vec<f64> = g.into_iter().map(|p| p.1).collect();
    let dist = empirical("last passage times", g.iter().copied())?;
    let ks = ks_vs_cdf(&dist, arcsine_cdf)?;
    let mut out = Outcome::default();
    out.checks.push(Check::at_most(
        "last_passage_ks",
        "(2/pi) arcsin(sqrt(s))",
        "last passage time at the infimum",
        ks,
        0.02,
    ));
    out.estimates.push(estimate_point(format!("KS of g_{t}/{t} vs arcsine law"), ks, g.len()));
    out.tables.push(ecdf_vs_cdf("ecdf", &dist, arcsine_cdf, 200));
    out.dumps = replica_dumps(&sim, t, 0.0, cfg, replicas, dump_limit(cfg, dump))?;
    Ok(out)
}

pub(crate) fn meander(cfg: &ExperimentConfig, dump: bool) -> Result<Outcome> {
    let spec = spec(cfg)?;
    let ProcessSpec::Stable(params) = spec else {
        return Err(config("meander needs a stable model"));
    };
    let alpha = params.alpha;
    let ts = levels(cfg, &[1.0, 4.0]);
    if ts.len() != 2 {
        return Err(config("meander needs two conditioning times"));
    }
    let dt = cfg.budget.dt.unwrap_or(1e-3);
    let n = cfg.budget.samples.unwrap_or(4000);
    let frac = cfg.thresholds.x0_fraction.unwrap_or(0.01);
    let x_fixed = cfg.thresholds.x.unwrap_or(frac * params.norming(ts[0]));
    let cap = cap_factor(cfg);
    let limit = dump_limit(cfg, dump);
    let mut out = Outcome::default();

    // excursion conditioned on a long lifetime, entered from a small start
    let mut endpoints = Vec::new();
    let mut low_fraction = Vec::new();
    let mut summaries = Vec::new();
    for (k, &t) in ts.iter().enumerate() {
        let c = params.norming(t);
        let mut plan = ConditionedPlan::new(dt, frac * c, Continuation::UntilHeight { level: 0.5 * c, cap: cap * t });
        plan.trace_max = t;
        let sampler = ConditionedSampler::new(&spec, Condition::LifetimeAbove(t), plan)?;
        let batch = sample_conditioned_batch(&sampler, n, cfg.seed.wrapping_add(k as u64), cfg.shards)?;
        let ends: Vec<f64> = batch
            .excursions
            .iter()
            .map(|e| extract_meander(e, t, alpha).map(|m| m.endpoint))
            .collect::<Result<_>>()?;
        // stopped only once the height passed 0.5 c(t), so low ones are decided
        let low = batch.excursions.iter().filter(|e| e.height <= 0.5 * c).count();
        let undecided = batch.excursions.iter().filter(|e| e.height <= 0.5 * c && e.censored).count();
        let share = low as f64 / n as f64;
        out.estimates.push(Estimate {
            name: format!("n(ε̄ <= 0.5 c(t) | ζ > t) at t={t}"),
            value: share,
            ci_lo: crate::stats::wilson_interval(low, n).0,
            ci_hi: crate::stats::wilson_interval(low, n).1,
            n_samples: n,
            censored_frac: undecided as f64 / n as f64,
        });
        let lowest = batch.excursions.iter().map(|e| e.height / c).fold(f64::INFINITY, f64::min);
        out.notes.push(format!(
            "lifetime > {t}: acceptance rate {:.4e} from x0 = {}; lowest height / c(t) = {lowest:.4}",
            batch.acceptance_rate(),
            frac * c
        ));
        low_fraction.push(share);
        summaries.push(conditioned_table(&format!("conditioned_t{t}"), &format!("lifetime>{t}"), &batch.excursions, f64::INFINITY));
        out.dumps.extend(batch.excursions.iter().take(limit).map(excursion_dump));
        endpoints.push(ends);
    }
    let a = empirical("meander endpoints", endpoints[0].iter().copied())?;
    let b = empirical("meander endpoints", endpoints[1].iter().copied())?;
    out.checks.push(Check::at_most(
        "meander_endpoint_ks",
        "same law at both t",
        "rescaled excursion under n(·|ζ>t) converges to the stable meander",
        ks_two_sample(&a, &b),
        0.05,
    ));
    for (t, share) in ts.iter().zip(&low_fraction) {
        out.checks.push(Check::at_least(
            &format!("low_height_fraction_t{t}"),
            "bounded away from 0",
            "n(ε̄ <= d | ζ > 1) > 0: long-lived excursions can stay near the bottom",
            *share,
            0.01,
        ));
    }
    out.tables.push(ecdf_pair("meander_endpoints", ["t1", "t2"], &a, &b, 400));

    // the path from a fixed start conditioned to survive, and its free continuation
    let free = StableSampler::new(&params, dt)?;
    let mut rng = RngStream::new(cfg.seed, AUX_SHARD);
    let free_draws = empirical("free increments", (0..20_000).map(|_| free.sample_increment(1.0, &mut rng)))?;
    let mut starts = Vec::new();
    for (k, &t) in ts.iter().enumerate() {
        let c = params.norming(t);
        let mut plan = ConditionedPlan::new(dt, x_fixed, Continuation::FixedHorizon { horizon: 2.0 * t });
        plan.trace_max = 2.0 * t;
        let sampler = ConditionedSampler::new(&spec, Condition::LifetimeAbove(t), plan)?;
        let batch = sample_conditioned_batch(&sampler, n, cfg.seed.wrapping_add(100 + k as u64), cfg.shards)?;
        let mut at_t = Vec::with_capacity(n);
        let mut incr = Vec::with_capacity(n);
        for e in &batch.excursions {
            let tr = e.trace.as_ref().expect("conditioned draws carry traces");
            let (x1, x2) = (tr.value_at(t).unwrap_or(f64::NAN), tr.value_at(2.0 * t).unwrap_or(f64::NAN));
            at_t.push(x1 / c);
            incr.push((x2 - x1) / c);
        }
        let inc = empirical("post-t increments", incr.iter().copied())?;
        out.checks.push(Check::at_most(
            &format!("post_t_increment_ks_t{t}"),
            "free stable increment",
            "after time t the conditioned process continues as the unconditioned one",
            ks_two_sample(&inc, &free_draws),
            0.05,
        ));
        out.tables.push(ecdf_pair(&format!("increments_t{t}"), ["conditioned", "free"], &inc, &free_draws, 400));
        starts.push(at_t);
    }
    let a2 = empirical("endpoints", starts[0].iter().copied())?;
    let b2 = empirical("endpoints", starts[1].iter().copied())?;
    out.checks.push(Check::at_most(
        "fixed_start_endpoint_ks",
        "same law at both t",
        "X_{ts}/c(t) under P_x(·|τ₀⁻>t) converges to the meander followed by a free stable path",
        ks_two_sample(&a2, &b2),
        0.06,
    ));
    out.tables.push(ecdf_pair("fixed_start_endpoints", ["t1", "t2"], &a2, &b2, 400));

    // natural excursions against the rejection sampler at the first level
    let t = ts[0];
    let c = params.norming(t);
    let horizon = cfg.budget.horizon.unwrap_or(2.0 * t);
    let replicas = cfg.budget.replicas.unwrap_or(6000);
    let delta = cfg.thresholds.delta.unwrap_or(10.0 * dt);
    ensure_delta(delta, dt)?;
    let mut plan = CollectPlan::new(horizon, dt, replicas, delta);
    plan.zero_tol = Some(cfg.thresholds.zero_tol.unwrap_or(0.0));
    plan.resolve_lifetime = t;
    plan.resolve_height = 0.0;
    plan.extension_cap = cap * t;
    plan.trace = Some(TraceSpec { min_lifetime: t, max_time: t });
    let ens = collect_ensemble(&spec, &plan, cfg.seed.wrapping_add(200), cfg.shards)?;
    let natural: Vec<f64> = ens
        .excursions
        .iter()
        .filter(|e| e.lifetime > t)
        .filter_map(|e| e.value_at(t))
        .map(|v| v / c)
        .collect();
    if natural.len() < 100 {
        return Err(Error::InsufficientData { what: format!("natural excursions with lifetime > {t}"), have: natural.len(), need: 100 });
    }
    let nat = empirical("natural endpoints", natural.iter().copied())?;
    out.checks.push(Check::at_most(
        "natural_vs_rejection_ks",
        "rejection sampler from a small start",
        "two estimators of n(·|ζ>t) agree",
        ks_two_sample(&nat, &a),
        0.05,
    ));
    out.estimates.push(estimate_point(format!("natural excursions with lifetime > {t}"), natural.len() as f64, natural.len()));
    out.tables.push(ecdf_pair("natural_vs_rejection", ["natural", "rejection"], &nat, &a, 400));
    out.tables.extend(summaries);
    Ok(out)
}

pub(crate) fn height_tail(cfg: &ExperimentConfig, dump: bool) -> Result<Outcome> {
    let spec = spec(cfg)?;
    let ProcessSpec::Stable(params) = spec else {
        return Err(config("height_tail needs a stable model"));
    };
    let alpha = params.alpha;
    let constant = height_lifetime_ratio_constant(alpha)?;
    let mut ts = levels(cfg, &[0.05, 0.5, 5.0]);
    ts.sort_by(f64::total_cmp);
    let t_max = ts[ts.len() - 1];
    let dt = cfg.budget.dt.unwrap_or(1e-3);
    let horizon = cfg.budget.horizon.unwrap_or(20.0);
    let replicas = cfg.budget.replicas.unwrap_or(400);
    let delta = cfg.thresholds.delta.unwrap_or((0.1 * ts[0]).max(dt));
    ensure_delta(delta, dt)?;
    let mut plan = CollectPlan::new(horizon, dt, replicas, delta);
    plan.zero_tol = cfg.thresholds.zero_tol;
    plan.resolve_lifetime = t_max;
    plan.resolve_height = params.norming(t_max);
    plan.extension_cap = cap_factor(cfg) * t_max;
    let ens = collect_ensemble(&spec, &plan, cfg.seed, cfg.shards)?;

    let mut out = Outcome::default();
    let mut table = Table::new("height_lifetime_ratio", &["t", "ratio", "ci_lo", "ci_hi", "constant"]);
    let mut gaps = Vec::new();
    for &t in &ts {
        let r = measure_ratio(&ens, &Event::HeightAbove(params.norming(t)), &Event::LifetimeAbove(t))?;
        table.push([t, r.value, r.ci_lo, r.ci_hi, constant]);
        gaps.push((r.value - constant).abs());
        if t == t_max {
            out.checks.push(Check::relative(
                "height_lifetime_ratio",
                "(alpha-1) Gamma(1-1/alpha)",
                "spectrally positive: n(ε̄>c(t)) ~ (alpha-1) Gamma(1-rho) n(ζ>t)",
                r.value,
                constant,
                0.15,
            ));
        }
        out.estimates.push(r);
    }
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    out.notes.push(format!(
        "distance to the constant over t = {ts:?}: {gaps:?} ({})",
        if monotone { "nonincreasing" } else { "not monotone" }
    ));
    out.tables.push(table);
    out.tables.push(summary_table("excursions", &ens, f64::INFINITY)?);
    let sim = Simulator::new(&spec, dt, None)?;
    out.dumps = replica_dumps(&sim, horizon, 0.0, cfg, replicas, dump_limit(cfg, dump))?;
    Ok(out)
}

/// Natural excursions of the heavy-tailed negative-drift model at level `t`.
struct NegativeDrift {
    model: LevyModel,
    spec: ProcessSpec,
    beta: f64,
    theta: f64,
    t: f64,
    ens: ExcursionEnsemble,
}

fn negative_drift_ensemble(cfg: &ExperimentConfig, traces: bool) -> Result<NegativeDrift> {
    let spec = spec(cfg)?;
    let (model, theta) = heavy_tailed_negative_drift(&spec)?;
    let beta = model.beta_drift;
    let t = levels(cfg, &[3.0])[0];
    let dt = cfg.budget.dt.unwrap_or(0.005);
    let delta = cfg.thresholds.delta.unwrap_or(2.0 * dt);
    ensure_delta(delta, dt)?;
    let mut plan = CollectPlan::new(cfg.budget.horizon.unwrap_or(5000.0), dt, cfg.budget.replicas.unwrap_or(450), delta);
    plan.cutoff = cfg.budget.cutoff;
    plan.zero_tol = Some(cfg.thresholds.zero_tol.unwrap_or(0.0));
    plan.resolve_lifetime = t;
    plan.resolve_height = beta * t;
    plan.extension_cap = cap_factor(cfg) * t;
    if traces {
        plan.trace = Some(TraceSpec { min_lifetime: t, max_time: t });
    }
    let ens = collect_ensemble(&spec, &plan, cfg.seed, cfg.shards)?;
    Ok(NegativeDrift { model, spec, beta, theta, t, ens })
}

impl NegativeDrift {
    fn long_lived(&self) -> Vec<&Excursion> {
        self.ens.excursions.iter().filter(|e| e.lifetime > self.t).collect()
    }

    fn dumps(&self, cfg: &ExperimentConfig, dump: bool) -> Result<Vec<PathDump>> {
        let sim = Simulator::new(&self.spec, cfg.budget.dt.unwrap_or(0.005), cfg.budget.cutoff)?;
        let horizon = cfg.budget.horizon.unwrap_or(5000.0);
        replica_dumps(&sim, horizon, 0.0, cfg, cfg.budget.replicas.unwrap_or(450), dump_limit(cfg, dump))
    }
}

pub(crate) fn equivalence(cfg: &ExperimentConfig, dump: bool) -> Result<Outcome> {
    let nd = negative_drift_ensemble(cfg, false)?;
    let (beta, t, ens) = (nd.beta, nd.t, &nd.ens);
    let anchor = "n(ε̄>βt) and n(ζ>t) are asymptotically equivalent as t→∞";
    let mut out = Outcome::default();
    let hl = conditional_tail_ratio(ens, &Event::HeightAbove(beta * t), &Event::LifetimeAbove(t))?;
    out.checks.push(Check::at_least("height_given_lifetime", "tends to 1", anchor, hl.value, 0.9));
    let lh = conditional_tail_ratio(ens, &Event::LifetimeAbove(t), &Event::HeightAbove(beta * t))?;
    out.checks.push(Check::at_least("lifetime_given_height", "tends to 1", anchor, lh.value, 0.9));

    let tail = nu_bar(&nd.model.jumps, beta * t)?;
    let nz = estimate_n_zeta(ens)?;
    let lifetime_count = ens.excursions.iter().filter(|e| e.lifetime > t).count();
    let rel_tail = lifetime_count as f64 / ens.len() as f64;
    let completed = nz
        .completed
        .clone()
        .ok_or_else(|| Error::Contract("ensemble lacks observed time".into()))?;
    let ratio = rel_tail / (completed.value * tail);
    out.checks.push(Check::within(
        "lifetime_tail_over_n_zeta_nu_bar",
        "1",
        "n(ζ>t) ~ n(ζ) ν̄(βt) for a process drifting to -∞",
        ratio,
        1.0,
        0.2,
    ));
    let naive = rel_tail / (nz.estimate.value * tail);
    out.notes.push(format!(
        "with the mean kept lifetime instead, the ratio is {naive:.4}; kept excursions cover {:.3} of the observed time",
        1.0 - nz.missing_fraction.unwrap_or(f64::NAN)
    ));
    out.notes.push(nz.note.clone());
    let (lo, hi) = crate::stats::wilson_interval(lifetime_count, ens.len());
    out.estimates.extend([
        hl,
        lh,
        Estimate {
            name: format!("n(ζ>{t}) / (n(ζ) ν̄({}))", beta * t),
            value: ratio,
            ci_lo: lo / rel_tail * ratio * completed.ci_lo / completed.value,
            ci_hi: hi / rel_tail * ratio * completed.ci_hi / completed.value,
            n_samples: lifetime_count,
            censored_frac: ens.censored_fraction(),
        },
        nz.estimate,
        completed,
    ]);

    let mut curve = Table::new("lifetime_tail", &["s", "n_zeta_tail_over_n_zeta", "nu_bar_beta_s"]);
    for i in 1..=40 {
        let s = t * i as f64 / 20.0;
        let count = ens.excursions.iter().filter(|e| e.lifetime > s).count();
        curve.push([s, count as f64 / ens.horizon_total, nu_bar(&nd.model.jumps, beta * s)?]);
    }
    out.tables.push(curve);
    out.tables.push(summary_table("excursions", &filtered(ens, t), beta * t)?);
    out.dumps = nd.dumps(cfg, dump)?;
    Ok(out)
}

/// The ensemble restricted to lifetimes above `t`, for compact CSVs.
fn filtered(ens: &ExcursionEnsemble, t: f64) -> ExcursionEnsemble {
    let mut e = ExcursionEnsemble::empty(ens.delta, ens.zero_tol);
    e.excursions = ens.excursions.iter().filter(|e| e.lifetime > t).cloned().collect();
    e
}

/// Values below `delta` collapse to 0: the grid cannot tell them apart.
fn censor_below(x: f64, delta: f64) -> f64 {
    if x < delta {
        0.0
    } else {
        x
    }
}

pub(crate) fn big_jump(cfg: &ExperimentConfig, dump: bool) -> Result<Outcome> {
    let nd = negative_drift_ensemble(cfg, false)?;
    let (beta, theta, t, ens) = (nd.beta, nd.theta, nd.t, &nd.ens);
    let long = nd.long_lived();
    let anchor = "under n(·|ζ>t) the big jump time and size/t converge to independent 𝒯 and 𝒫";
    let mut out = Outcome::default();
    out.checks.push(Check::at_least(
        "conditioned_excursions",
        "budget",
        "excursions with lifetime above t",
        long.len() as f64,
        2000.0,
    ));
    let single = long.iter().filter(|e| e.big_jumps_in_lifetime(beta * t) == 1).count();
    out.checks.push(Check::at_least(
        "single_big_jump_fraction",
        "tends to 1",
        "long lifetimes come from exactly one jump above βt",
        single as f64 / long.len() as f64,
        0.9,
    ));
    let (times, sizes): (Vec<f64>, Vec<f64>) = long
        .iter()
        .filter_map(|e| e.first_big_jump(beta * t))
        .map(|(j, d)| (j, d / t))
        .unzip();
    let size_dist = empirical("big jump sizes", sizes.iter().copied())?;
    let k = cfg.thresholds.hill_k.unwrap_or(sizes.len() / 4);
    let hill = hill_estimator(&size_dist, k)?;
    out.checks.push(Check::within("hill_tail_index", "θ", anchor, hill.theta, theta, 0.15));
    let ks_size = ks_vs_cdf(&size_dist, |x| pareto_limit_cdf(x, beta, theta))?;
    out.checks.push(Check::at_most("jump_size_ks", "P(𝒫<=x) = 1-(x/β)^-θ", anchor, ks_size, 0.08));

    let delta = ens.delta;
    let sampler = SizeBiasedSampler::completed(ens)?;
    let mut rng = RngStream::new(cfg.seed, AUX_SHARD);
    let draws: Vec<f64> = (0..20_000).map(|_| censor_below(sampler.sample(&mut rng), delta)).collect();
    let draw_dist = empirical("𝒯 draws", draws.iter().copied())?;
    let time_dist = empirical("big jump times", times.iter().map(|&j| censor_below(j, delta)))?;
    let ks_time = ks_two_sample(&time_dist, &draw_dist);
    out.checks.push(Check::at_most("jump_time_ks", "size-biased lifetime sampler", anchor, ks_time, 0.08));
    let corr = correlation(&times, &sizes)?;
    out.checks.push(Check::at_most("time_size_correlation", "independence", anchor, corr.abs(), 0.1));

    out.estimates.push(Estimate {
        name: format!("Hill tail index of jump size / t (k={})", hill.k),
        value: hill.theta,
        ci_lo: hill.ci_lo,
        ci_hi: hill.ci_hi,
        n_samples: sizes.len(),
        censored_frac: 0.0,
    });
    out.notes.push(format!(
        "jump times and 𝒯 draws below delta = {delta} are set to 0; 𝒯 includes an atom of mass {:.4} for unresolved time",
        sampler.atom() / (sampler.total() + sampler.atom())
    ));

    let mut jumps = Table::new("big_jumps", &["J", "size_over_t"]);
    for (j, d) in times.iter().zip(&sizes) {
        jumps.push([*j, *d]);
    }
    out.tables.push(jumps);
    let mut qq = Table::new("jump_size_qq", &["p", "empirical", "pareto"]);
    for i in 1..100 {
        let p = i as f64 / 100.0;
        qq.push([p, size_dist.quantile(p), beta * (1.0 - p).powf(-1.0 / theta)]);
    }
    out.tables.push(qq);
    out.tables.push(ecdf_pair("jump_time_ecdf", ["J", "T"], &time_dist, &draw_dist, 400));
    out.dumps = nd.dumps(cfg, dump)?;
    Ok(out)
}

pub(crate) fn drift_profile(cfg: &ExperimentConfig, dump: bool) -> Result<Outcome> {
    let nd = negative_drift_ensemble(cfg, true)?;
    let (beta, t) = (nd.beta, nd.t);
    let anchor = "ε_{ts}/t under n(·|ζ>t) converges to (𝒫 - βs) ∨ 0";
    let mut slopes = Vec::new();
    let mut quiet = 0usize;
    let mut with_jump = 0usize;
    let grid: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
    let mut profile = vec![0.0; grid.len()];
    let mut limit = vec![0.0; grid.len()];
    for e in nd.long_lived() {
        let Some((j, size)) = e.first_big_jump(beta * t) else { continue };
        let Some(tr) = e.trace.as_ref() else { continue };
        with_jump += 1;
        let jump = size / t;
        let hi = 0.9 * (jump / beta).min(1.0);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        let mut sup = 0.0f64;
        for (&s, &v) in tr.times.iter().zip(&tr.values) {
            if s < j {
                sup = sup.max((v / t).abs());
            }
            let u = s / t;
            if (0.1..=hi).contains(&u) {
                xs.push(u);
                ys.push(v / t);
            }
        }
        if sup <= 0.05 {
            quiet += 1;
        }
        if let Ok(fit) = slope_fit(&xs, &ys, (f64::NEG_INFINITY, f64::INFINITY)) {
            slopes.push(fit.slope);
        }
        for (k, &u) in grid.iter().enumerate() {
            profile[k] += e.value_at(u * t).unwrap_or(0.0) / t;
            limit[k] += (jump - beta * u).max(0.0);
        }
    }
    let mut out = Outcome::default();
    out.checks.push(Check::at_least("fitted_excursions", "budget", anchor, slopes.len() as f64, 500.0));
    out.checks.push(Check::within("mean_slope", "-β", anchor, mean(&slopes), -beta, 0.1 * beta));
    let share = quiet as f64 / with_jump.max(1) as f64;
    out.checks.push(Check::at_least(
        "quiet_before_jump",
        "tends to 1",
        "before the big jump the excursion stays o(t)",
        share,
        0.9,
    ));
    let sd = crate::stats::variance(&slopes).sqrt();
    let m = mean(&slopes);
    let half = 1.96 * sd / (slopes.len() as f64).sqrt();
    out.estimates.push(Estimate {
        name: format!("mean slope of ε_(ts)/t after the big jump, t={t}"),
        value: m,
        ci_lo: m - half,
        ci_hi: m + half,
        n_samples: slopes.len(),
        censored_frac: 0.0,
    });
    let mut table = Table::new("mean_profile", &["s", "mean_scaled_excursion", "mean_limit"]);
    for (k, &u) in grid.iter().enumerate() {
        table.push([u, profile[k] / with_jump.max(1) as f64, limit[k] / with_jump.max(1) as f64]);
    }
    out.tables.push(table);
    out.tables.push(Table::samples("slopes", &[("slope", &slopes)]));
    out.dumps = nd.dumps(cfg, dump)?;
    Ok(out)
}

pub(crate) fn conditioned_start(cfg: &ExperimentConfig, dump: bool) -> Result<Outcome> {
    let spec = spec(cfg)?;
    let (model, _) = heavy_tailed_negative_drift(&spec)?;
    let x = cfg.thresholds.x.ok_or_else(|| config("conditioned_start needs thresholds.x"))?;
    let t = levels(cfg, &[3.0])[0];
    let dt = cfg.budget.dt.unwrap_or(0.005);
    let n = cfg.budget.samples.unwrap_or(2000);
    let cap = cap_factor(cfg) * t;
    let mut out = Outcome::default();

    let mut plan = ConditionedPlan::new(dt, x, Continuation::FixedHorizon { horizon: t });
    plan.cutoff = cfg.budget.cutoff;
    plan.trace_max = if dump { t } else { 0.0 };
    plan.acceptance_floor = 1e-6;
    let sampler = ConditionedSampler::new(&spec, Condition::LifetimeAbove(t), plan)?;
    let batch = sample_conditioned_batch(&sampler, n, cfg.seed, cfg.shards)?;
    let times: Vec<f64> = batch.excursions.iter().filter_map(|e| e.largest_jump(t)).map(|(j, _)| j).collect();
    out.notes.push(format!(
        "acceptance rate {:.4e}; {} of {n} conditioned paths have a jump before t",
        batch.acceptance_rate(),
        times.len()
    ));

    let passage = sample_t_x(&spec, x, 20 * n, PassagePlan { dt, cutoff: cfg.budget.cutoff, cap }, cfg.seed.wrapping_add(1), cfg.shards)?;
    let mut rng = RngStream::new(cfg.seed, AUX_SHARD);
    let draws: Vec<f64> = (0..20_000).map(|_| passage.sample(&mut rng)).collect();
    let jd = empirical("largest jump times", times.iter().copied())?;
    let td = empirical("𝒯_x draws", draws.iter().copied())?;
    out.checks.push(Check::at_most(
        "jump_time_ks",
        "P(𝒯_x<=s) = E_x[τ₀⁻∧s] / E_x[τ₀⁻]",
        "under P_x(·|τ₀⁻>t) the big jump time converges to the size-biased 𝒯_x",
        ks_two_sample(&jd, &td),
        0.08,
    ));

    // n(ζ) under the local time -X̲, for which the renewal function is x
    let mut cp = CollectPlan::new(cfg.budget.horizon.unwrap_or(5000.0), dt, cfg.budget.replicas.unwrap_or(40), 2.0 * dt);
    cp.cutoff = cfg.budget.cutoff;
    cp.zero_tol = Some(0.0);
    let ens = collect_ensemble(&spec, &cp, cfg.seed.wrapping_add(2), cfg.shards)?;
    let nz = n_zeta_per_local_time(&ens)?;
    let mean_tau = passage.mean.value;
    if model.is_spectrally_positive() {
        out.checks.push(Check::relative(
            "mean_passage_over_n_zeta_x",
            "n(ζ) V̂(x) with V̂(x) = x",
            "E_x[τ₀⁻] = n(ζ) V̂(x)",
            mean_tau,
            nz * x,
            0.1,
        ));
    }
    out.estimates.push(passage.mean.clone());
    out.estimates.push(estimate_point("n(ζ) per unit of infimum descent".into(), nz, ens.len()));
    out.tables.push(ecdf_pair("jump_time_ecdf", ["J", "T_x"], &jd, &td, 400));
    out.tables.push(conditioned_table("conditioned", &format!("lifetime>{t}"), &batch.excursions, model.beta_drift * t));
    out.dumps = batch.excursions.iter().take(dump_limit(cfg, dump)).map(excursion_dump).collect();
    Ok(out)
}
