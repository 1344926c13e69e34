//! Estimates of the excursion measure from simulated excursions, and samplers
//! for the conditional laws and limit variables built on top of them.
//!
//! The absolute level of `n` depends on a local-time normalization that a
//! simulation cannot observe, so the estimators here are ratios of counts.
//! Counts come from ensembles where every excursion starting before the
//! horizon is followed until the events of interest are decided.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::excursion::{DecomposeOptions, Excursion, ExcursionEnsemble, ExcursionJump, ExcursionTracker, Trace, TraceSpec};
use crate::levy_model::ProcessSpec;
use crate::pathsim::{Flow, Simulator};
use crate::rng::RngStream;
use crate::stats::wilson_interval;

const MIN_DENOMINATOR: usize = 100;

/// A predicate on one excursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "level", rename_all = "snake_case")]
pub enum Event {
    LifetimeAbove(f64),
    HeightAbove(f64),
    HeightAtMost(f64),
    /// Some jump larger than the level occurs within the lifetime.
    JumpAbove(f64),
}

impl Event {
    pub fn holds(&self, e: &Excursion) -> bool {
        match *self {
            Self::LifetimeAbove(t) => e.lifetime > t,
            Self::HeightAbove(x) => e.height > x,
            Self::HeightAtMost(x) => e.height <= x,
            Self::JumpAbove(x) => e.big_jumps_in_lifetime(x) > 0,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Self::LifetimeAbove(t) => format!("lifetime>{t}"),
            Self::HeightAbove(x) => format!("height>{x}"),
            Self::HeightAtMost(x) => format!("height<={x}"),
            Self::JumpAbove(x) => format!("jump>{x}"),
        }
    }
}

/// Point estimate with a 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_samples: usize,
    pub censored_frac: f64,
}

fn count(ens: &ExcursionEnsemble, pred: impl Fn(&Excursion) -> bool) -> (usize, usize) {
    let mut hits = 0;
    let mut censored = 0;
    for e in ens.excursions.iter().filter(|e| pred(e)) {
        hits += 1;
        censored += e.censored as usize;
    }
    (hits, censored)
}

fn require_count(what: String, have: usize) -> Result<()> {
    if have < MIN_DENOMINATOR {
        return Err(Error::InsufficientData { what, have, need: MIN_DENOMINATOR });
    }
    Ok(())
}

/// `n(A | B)` as `#(A ∧ B) / #B` with a Wilson interval.
pub fn conditional_tail_ratio(ens: &ExcursionEnsemble, a: &Event, b: &Event) -> Result<Estimate> {
    let (nb, censored) = count(ens, |e| b.holds(e));
    require_count(format!("excursions with {}", b.label()), nb)?;
    let (nab, _) = count(ens, |e| a.holds(e) && b.holds(e));
    let (lo, hi) = wilson_interval(nab, nb);
    Ok(Estimate {
        name: format!("n({} | {})", a.label(), b.label()),
        value: nab as f64 / nb as f64,
        ci_lo: lo,
        ci_hi: hi,
        n_samples: nb,
        censored_frac: censored as f64 / nb as f64,
    })
}

/// `n(A) / n(B)` as `#A / #B`; the interval treats both counts as Poisson.
pub fn measure_ratio(ens: &ExcursionEnsemble, a: &Event, b: &Event) -> Result<Estimate> {
    let (na, ca) = count(ens, |e| a.holds(e));
    let (nb, cb) = count(ens, |e| b.holds(e));
    require_count(format!("excursions with {}", a.label()), na)?;
    require_count(format!("excursions with {}", b.label()), nb)?;
    let value = na as f64 / nb as f64;
    let half = 1.96 * (1.0 / na as f64 + 1.0 / nb as f64).sqrt();
    Ok(Estimate {
        name: format!("n({}) / n({})", a.label(), b.label()),
        value,
        ci_lo: value * (-half).exp(),
        ci_hi: value * half.exp(),
        n_samples: na + nb,
        censored_frac: (ca + cb) as f64 / (na + nb) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NZetaEstimate {
    /// `Σζ / #` over kept excursions.
    pub estimate: Estimate,
    /// Observed time per kept excursion, which adds back the time spent in
    /// excursions shorter than `δ` and at the grid minimum.
    pub completed: Option<Estimate>,
    /// Share of the observed time not covered by kept excursions.
    pub missing_fraction: Option<f64>,
    pub note: String,
}

/// Mean lifetime of the kept excursions, estimating `n(ζ; ζ>δ) / n(ζ>δ)`.
///
/// On a grid the omitted mass `n(ζ; ζ<=δ)` shrinks slowly with `δ`, because
/// steps that set a new minimum behave like microscopic excursions. When the
/// ensemble records its observed time, `completed` estimates `n(ζ) / n(ζ>δ)`
/// with that mass restored.
pub fn estimate_n_zeta(ens: &ExcursionEnsemble) -> Result<NZetaEstimate> {
    if !ens.negative_drift {
        return Err(Error::Unsupported("n(ζ) is infinite unless the process drifts to -∞".into()));
    }
    let lifetimes: Vec<f64> = ens.uncensored().map(|e| e.lifetime).collect();
    if lifetimes.len() < 1000 {
        return Err(Error::InsufficientData {
            what: "uncensored excursions".into(),
            have: lifetimes.len(),
            need: 1000,
        });
    }
    let n = lifetimes.len() as f64;
    let kept_time: f64 = lifetimes.iter().sum();
    let mean = kept_time / n;
    let sd = (lifetimes.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let half = 1.96 * sd / n.sqrt();
    let censored_frac = ens.censored_fraction();
    let (completed, missing_fraction) = if ens.horizon_total >= kept_time && ens.horizon_total > 0.0 {
        let all = ens.excursions.len() as f64;
        let value = ens.horizon_total / all;
        // counts are Poisson in the number of kept excursions
        let rel = 1.96 / all.sqrt();
        (
            Some(Estimate {
                name: format!("n(ζ) relative to n(ζ>{}), completed", ens.delta),
                value,
                ci_lo: value * (1.0 - rel),
                ci_hi: value * (1.0 + rel),
                n_samples: ens.excursions.len(),
                censored_frac,
            }),
            Some(1.0 - kept_time / ens.horizon_total),
        )
    } else {
        (None, None)
    };
    Ok(NZetaEstimate {
        estimate: Estimate {
            name: format!("n(ζ) relative to n(ζ>{})", ens.delta),
            value: mean,
            ci_lo: mean - half,
            ci_hi: mean + half,
            n_samples: lifetimes.len(),
            censored_frac,
        },
        completed,
        missing_fraction,
        note: format!(
            "mean lifetime omits n(ζ; ζ<={}), which vanishes only as the minimum lifetime and time step go to 0",
            ens.delta
        ),
    })
}

/// `n(ζ)` when local time is the running-infimum descent `-X̲`: the total
/// observed time divided by the total descent. Paths must end at a zero of
/// the reflected process, which [`collect_ensemble`] arranges.
pub fn n_zeta_per_local_time(ens: &ExcursionEnsemble) -> Result<f64> {
    if !ens.negative_drift {
        return Err(Error::Unsupported("n(ζ) is infinite unless the process drifts to -∞".into()));
    }
    if !(ens.infimum_descent > 0.0) {
        return Err(domain("ensemble has no infimum descent"));
    }
    Ok(ens.horizon_total / ens.infimum_descent)
}

/// Size-biased uniform sampler: pick `ℓ_i` with probability `ℓ_i / Σℓ`, return
/// `U·ℓ_i`. Its CDF is `Σ min(ℓ_i, t) / Σ ℓ_i`. An optional atom at 0 stands
/// for length too short to resolve.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeBiasedSampler {
    lengths: Vec<f64>,
    cumulative: Vec<f64>,
    atom: f64,
}

impl SizeBiasedSampler {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::InsufficientData { what: "lengths".into(), have: 0, need: 1 });
        }
        if lengths.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(domain("lengths must be finite and nonnegative"));
        }
        let cumulative: Vec<f64> = lengths
            .iter()
            .scan(0.0, |acc, l| {
                *acc += l;
                Some(*acc)
            })
            .collect();
        if !(cumulative[cumulative.len() - 1] > 0.0) {
            return Err(domain("lengths sum to zero"));
        }
        Ok(Self { lengths, cumulative, atom: 0.0 })
    }

    /// Uncensored lifetimes of the ensemble.
    pub fn from_ensemble(ens: &ExcursionEnsemble) -> Result<Self> {
        Self::new(ens.uncensored().map(|e| e.lifetime).collect())
    }

    /// Like [`from_ensemble`](Self::from_ensemble), with the observed time not
    /// covered by kept excursions placed at 0. All of that time belongs to
    /// pieces shorter than `δ`, so the CDF is exact for `t >= δ`.
    pub fn completed(ens: &ExcursionEnsemble) -> Result<Self> {
        let mut s = Self::from_ensemble(ens)?;
        let kept: f64 = ens.excursions.iter().map(|e| e.lifetime).sum();
        s.atom = (ens.horizon_total - kept).max(0.0);
        Ok(s)
    }

    pub fn total(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    pub fn atom(&self) -> f64 {
        self.atom
    }

    pub fn mean_length(&self) -> f64 {
        self.total() / self.lengths.len() as f64
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        (self.lengths.iter().map(|l| l.min(t)).sum::<f64>() + self.atom) / (self.total() + self.atom)
    }

    /// `Σ min(ℓ_i, t) / n`.
    pub fn mean_truncated(&self, t: f64) -> f64 {
        self.lengths.iter().map(|l| l.min(t)).sum::<f64>() / self.lengths.len() as f64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = rng.random::<f64>() * (self.total() + self.atom);
        if u >= self.total() {
            return 0.0;
        }
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.lengths.len() - 1);
        rng.random::<f64>() * self.lengths[i]
    }
}

/// One draw of the size-biased jump time for an ensemble.
pub fn sample_t<R: Rng + ?Sized>(ens: &ExcursionEnsemble, rng: &mut R) -> Result<f64> {
    Ok(SizeBiasedSampler::from_ensemble(ens)?.sample(rng))
}

/// `β · U^{-1/θ}`, the Pareto limit of the scaled big jump.
pub fn sample_pareto_limit<R: Rng + ?Sized>(beta: f64, theta: f64, rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    beta * u.powf(-1.0 / theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassagePlan {
    pub dt: f64,
    pub cutoff: Option<f64>,
    /// Samples still above 0 at this time are censored.
    pub cap: f64,
}

/// Sampler for the size-biased law of `τ₀⁻` started from `x`.
#[derive(Debug, Clone)]
pub struct FirstPassageLaw {
    pub x: f64,
    pub sampler: SizeBiasedSampler,
    pub mean: Estimate,
}

impl FirstPassageLaw {
    /// `E_x[τ₀⁻ ∧ t] / E_x[τ₀⁻]` on each grid point.
    pub fn cdf_on(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.sampler.cdf(t)).collect()
    }

    pub fn expected_min_on(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.sampler.mean_truncated(t)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler.sample(rng)
    }
}

/// First time the streamed path (or a left limit) is below 0, or `None` at the cap.
pub fn first_passage_time(sim: &Simulator, x: f64, cap: f64, rng: &mut RngStream) -> Option<f64> {
    let mut hit = None;
    sim.run(cap, x, rng, |p| {
        if p.value < 0.0 || p.left_limit() < 0.0 {
            hit = Some(p.time);
            Flow::Stop
        } else {
            Flow::Continue
        }
    });
    hit
}

/// Monte Carlo for the law of the size-biased passage time from `x`.
pub fn sample_t_x(spec: &ProcessSpec, x: f64, n_mc: usize, plan: PassagePlan, seed: u64, shards: usize) -> Result<FirstPassageLaw> {
    if !spec.drifts_to_minus_infinity() {
        return Err(Error::Unsupported("E_x[τ₀⁻] is infinite unless the process drifts to -∞".into()));
    }
    if !(x > 0.0) {
        return Err(domain(format!("start level must be positive, got {x}")));
    }
    let shards = shards.max(1);
    let sim = Simulator::new(spec, plan.dt, plan.cutoff)?;
    let per_shard: Vec<Vec<(f64, bool)>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let base = RngStream::new(seed, s as u64);
            (s..n_mc)
                .step_by(shards)
                .map(|i| {
                    let mut rng = base.substream(i as u64);
                    match first_passage_time(&sim, x, plan.cap, &mut rng) {
                        Some(t) => (t, false),
                        None => (plan.cap, true),
                    }
                })
                .collect()
        })
        .collect();
    let draws: Vec<(f64, bool)> = per_shard.into_iter().flatten().collect();
    let censored = draws.iter().filter(|d| d.1).count();
    let times: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let sd = (times.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let half = 1.96 * sd / n.sqrt();
    Ok(FirstPassageLaw {
        x,
        mean: Estimate {
            name: format!("E_x[τ₀⁻] at x={x}"),
            value: mean,
            ci_lo: mean - half,
            ci_hi: mean + half,
            n_samples: times.len(),
            censored_frac: censored as f64 / n,
        },
        sampler: SizeBiasedSampler::new(times)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", content = "level", rename_all = "snake_case")]
pub enum Condition {
    LifetimeAbove(f64),
    HeightAbove(f64),
}

/// What happens after a path has met the condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuation {
    /// Follow it until it passes below 0, censoring at this absolute time.
    UntilPassage { cap: f64 },
    /// Follow it freely, whether or not it passes below 0, up to this time.
    FixedHorizon { horizon: f64 },
    /// Follow it until it passes below 0 or its height exceeds `level`,
    /// censoring at time `cap`. Enough to decide `{height <= level}`.
    UntilHeight { level: f64, cap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionedPlan {
    pub dt: f64,
    pub cutoff: Option<f64>,
    pub x0: f64,
    pub continuation: Continuation,
    /// Record the path up to this time.
    pub trace_max: f64,
    /// Give up when the estimated acceptance rate falls below this.
    pub acceptance_floor: f64,
}

impl ConditionedPlan {
    pub fn new(dt: f64, x0: f64, continuation: Continuation) -> Self {
        Self { dt, cutoff: None, x0, continuation, trace_max: f64::INFINITY, acceptance_floor: 1e-5 }
    }
}

/// Rejection sampler for `P_{x0}(· | condition)`, the small-`x0` proxy of
/// `n(· | condition)`.
#[derive(Debug, Clone)]
pub struct ConditionedSampler {
    sim: Simulator,
    condition: Condition,
    plan: ConditionedPlan,
}

#[derive(Debug, Clone)]
pub struct ConditionedDraw {
    /// Values are those of `X` itself, starting at `x0`.
    pub excursion: Excursion,
    pub attempts: u64,
}

enum Attempt {
    Rejected,
    Accepted(Excursion),
}

impl ConditionedSampler {
    pub fn new(spec: &ProcessSpec, condition: Condition, plan: ConditionedPlan) -> Result<Self> {
        spec.validate()?;
        let level = match condition {
            Condition::LifetimeAbove(t) => t,
            Condition::HeightAbove(x) => x,
        };
        if !(level > 0.0) {
            return Err(domain("conditioning level must be positive"));
        }
        if !(plan.x0 > 0.0) {
            return Err(domain(format!("start x0 must be positive, got {}", plan.x0)));
        }
        if let Condition::HeightAbove(x) = condition {
            if plan.x0 >= x {
                return Err(domain(format!("start x0 = {} must lie below the height level {x}", plan.x0)));
            }
        }
        if !(plan.acceptance_floor > 0.0 && plan.acceptance_floor < 1.0) {
            return Err(domain("acceptance floor must lie in (0, 1)"));
        }
        Ok(Self { sim: Simulator::new(spec, plan.dt, plan.cutoff)?, condition, plan })
    }

    pub fn plan(&self) -> &ConditionedPlan {
        &self.plan
    }

    fn attempt(&self, rng: &mut RngStream) -> Attempt {
        let plan = &self.plan;
        let mut accepted = false;
        let mut passage: Option<f64> = None;
        let mut last_alive = 0.0;
        let mut height = plan.x0;
        let mut jumps = Vec::new();
        let mut trace = Trace::default();
        let end = match plan.continuation {
            Continuation::UntilPassage { cap } | Continuation::UntilHeight { cap, .. } => cap,
            Continuation::FixedHorizon { horizon } => horizon,
        };
        let zero_after_passage = !matches!(plan.continuation, Continuation::FixedHorizon { .. });
        let mut last_time = 0.0;
        self.sim.run(f64::INFINITY, plan.x0, rng, |p| {
            last_time = p.time;
            let below = p.value < 0.0 || p.left_limit() < 0.0;
            if passage.is_none() {
                if below {
                    passage = Some(p.time);
                } else {
                    last_alive = p.time;
                    height = height.max(p.value);
                    if let Some(size) = p.jump {
                        jumps.push(ExcursionJump { time: p.time, size });
                    }
                }
            }
            if p.time <= plan.trace_max {
                trace.times.push(p.time);
                trace.values.push(if passage.is_some() && zero_after_passage {
                    0.0
                } else {
                    p.value
                });
            }
            if !accepted {
                accepted = match self.condition {
                    Condition::LifetimeAbove(t) => passage.is_none() && p.time > t,
                    Condition::HeightAbove(x) => passage.is_none() && p.value > x,
                };
                if !accepted && passage.is_some() {
                    return Flow::Stop;
                }
            }
            if accepted {
                let done = match plan.continuation {
                    Continuation::UntilPassage { .. } => passage.is_some(),
                    Continuation::UntilHeight { level, .. } => passage.is_some() || height > level,
                    Continuation::FixedHorizon { .. } => false,
                };
                if done || p.time >= end {
                    return Flow::Stop;
                }
            }
            Flow::Continue
        });
        if !accepted {
            return Attempt::Rejected;
        }
        let censored = passage.is_none();
        Attempt::Accepted(Excursion {
            start_time: 0.0,
            lifetime: if censored { last_time } else { last_alive },
            height,
            censored,
            jumps,
            trace: Some(trace),
            shard: rng.shard(),
            replica: 0,
        })
    }

    /// Draws one conditioned excursion; fails when acceptance is hopeless.
    pub fn draw(&self, rng: &mut RngStream) -> Result<ConditionedDraw> {
        let floor = self.plan.acceptance_floor;
        let give_up = (10.0 / floor).ceil() as u64;
        let mut attempts = 0u64;
        loop {
            attempts += 1;
            if let Attempt::Accepted(excursion) = self.attempt(rng) {
                return Ok(ConditionedDraw { excursion, attempts });
            }
            if attempts >= give_up {
                return Err(Error::LowAcceptance { rate: 1.0 / attempts as f64, floor, attempts });
            }
        }
    }
}

pub fn sample_conditioned_excursion(
    spec: &ProcessSpec,
    condition: Condition,
    plan: ConditionedPlan,
    rng: &mut RngStream,
) -> Result<ConditionedDraw> {
    ConditionedSampler::new(spec, condition, plan)?.draw(rng)
}

#[derive(Debug, Clone)]
pub struct ConditionedBatch {
    pub excursions: Vec<Excursion>,
    pub attempts: u64,
}

impl ConditionedBatch {
    pub fn acceptance_rate(&self) -> f64 {
        self.excursions.len() as f64 / self.attempts.max(1) as f64
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.excursions.is_empty() {
            return 0.0;
        }
        self.excursions.iter().filter(|e| e.censored).count() as f64 / self.excursions.len() as f64
    }
}

/// `n` conditioned excursions split over shards; shard `s` draws replicas
/// `s, s + shards, ...` from its own stream.
pub fn sample_conditioned_batch(
    sampler: &ConditionedSampler,
    n: usize,
    seed: u64,
    shards: usize,
) -> Result<ConditionedBatch> {
    let shards = shards.max(1);
    let per_shard: Vec<Result<(Vec<Excursion>, u64)>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let base = RngStream::new(seed, s as u64);
            let mut out = Vec::new();
            let mut attempts = 0;
            for i in (s..n).step_by(shards) {
                let mut rng = base.substream(i as u64);
                let mut draw = sampler.draw(&mut rng)?;
                draw.excursion.replica = i as u64;
                attempts += draw.attempts;
                out.push(draw.excursion);
            }
            Ok((out, attempts))
        })
        .collect();
    let mut batch = ConditionedBatch { excursions: Vec::with_capacity(n), attempts: 0 };
    for r in per_shard {
        let (ex, a) = r?;
        batch.excursions.extend(ex);
        batch.attempts += a;
    }
    batch.excursions.sort_by_key(|e| e.replica);
    Ok(batch)
}

/// `s ↦ ε_{ts} / t^{1/α}` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanderSample {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub endpoint: f64,
}

pub fn extract_meander(exc: &Excursion, t: f64, alpha: f64) -> Result<MeanderSample> {
    if !(t > 0.0) || !(alpha > 0.0 && alpha <= 2.0) {
        return Err(domain("meander needs t > 0 and α in (0, 2]"));
    }
    if exc.lifetime <= t {
        return Err(Error::Contract(format!("meander needs lifetime > {t}, got {}", exc.lifetime)));
    }
    let trace = exc
        .trace
        .as_ref()
        .ok_or_else(|| Error::Contract("excursion carries no trace".into()))?;
    if trace.times.last().is_none_or(|&last| last < t) {
        return Err(Error::Contract(format!("trace does not reach time {t}")));
    }
    let c = t.powf(1.0 / alpha);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (&s, &v) in trace.times.iter().zip(&trace.values) {
        if s > t {
            break;
        }
        times.push(s / t);
        values.push(v / c);
    }
    let endpoint = exc.value_at(t).expect("trace reaches t") / c;
    Ok(MeanderSample { times, values, endpoint })
}

/// How natural excursions are collected from independent paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectPlan {
    pub horizon: f64,
    pub dt: f64,
    pub cutoff: Option<f64>,
    pub replicas: usize,
    /// `None` selects [`default_zero_tol`].
    pub zero_tol: Option<f64>,
    pub delta: f64,
    /// An excursion open at the horizon is followed until it closes, or until
    /// it is older than this lifetime and higher than `resolve_height`.
    pub resolve_lifetime: f64,
    pub resolve_height: f64,
    /// Extra time allowed past the horizon; what is still open then is censored.
    pub extension_cap: f64,
    pub trace: Option<TraceSpec>,
}

impl CollectPlan {
    pub fn new(horizon: f64, dt: f64, replicas: usize, delta: f64) -> Self {
        Self {
            horizon,
            dt,
            cutoff: None,
            replicas,
            zero_tol: None,
            delta,
            resolve_lifetime: f64::INFINITY,
            resolve_height: f64::INFINITY,
            extension_cap: 100.0 * horizon,
            trace: None,
        }
    }
}

/// Twice the typical grid increment.
pub fn default_zero_tol(sim: &Simulator) -> f64 {
    2.0 * sim.increment_scale()
}

fn collect_one(sim: &Simulator, plan: &CollectPlan, opts: DecomposeOptions, shard: u64, replica: u64, rng: &mut RngStream) -> ExcursionTracker {
    let mut tracker = ExcursionTracker::new(opts).tagged(shard, replica);
    let stop_at = plan.horizon + plan.extension_cap;
    sim.run(f64::INFINITY, 0.0, rng, |p| {
        tracker.push(p);
        if p.time < plan.horizon {
            return Flow::Continue;
        }
        let resolved = match (tracker.open_age(), tracker.open_height()) {
            (None, _) => true,
            (Some(age), Some(h)) => age > plan.resolve_lifetime && h > plan.resolve_height,
            _ => true,
        };
        if resolved || p.time >= stop_at {
            Flow::Stop
        } else {
            Flow::Continue
        }
    });
    tracker
}

/// Natural excursions of `X - X̲` from `plan.replicas` paths started at 0.
/// Replica `i` runs on shard `i mod shards` with its own substream.
pub fn collect_ensemble(spec: &ProcessSpec, plan: &CollectPlan, seed: u64, shards: usize) -> Result<ExcursionEnsemble> {
    spec.validate()?;
    if !(plan.horizon > 0.0 && plan.dt > 0.0 && plan.dt <= plan.horizon) {
        return Err(crate::error::config("collection needs 0 < dt <= horizon"));
    }
    if plan.delta < plan.dt {
        return Err(crate::error::config(format!(
            "minimum lifetime {} is below the time step {}",
            plan.delta, plan.dt
        )));
    }
    if plan.replicas == 0 {
        return Err(crate::error::config("replicas must be positive"));
    }
    let shards = shards.max(1);
    let sim = Simulator::new(spec, plan.dt, plan.cutoff)?;
    let zero_tol = plan.zero_tol.unwrap_or_else(|| default_zero_tol(&sim));
    let mut opts = DecomposeOptions::new(zero_tol, plan.delta)?;
    if let Some(tr) = plan.trace {
        opts = opts.with_trace(tr);
    }
    let parts: Vec<ExcursionEnsemble> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let base = RngStream::new(seed, s as u64);
            let mut ens = ExcursionEnsemble::empty(plan.delta, zero_tol);
            for i in (s..plan.replicas).step_by(shards) {
                let mut rng = base.substream(i as u64);
                let tracker = collect_one(&sim, plan, opts, s as u64, i as u64, &mut rng);
                ens.absorb(tracker.finish());
            }
            ens
        })
        .collect();
    let mut ens = parts
        .into_iter()
        .fold(ExcursionEnsemble::empty(plan.delta, zero_tol), ExcursionEnsemble::merge);
    ens.model_tag = spec.tag();
    ens.negative_drift = spec.drifts_to_minus_infinity();
    ens.spectrally_positive = spec.is_spectrally_positive();
    Ok(ens)
}
