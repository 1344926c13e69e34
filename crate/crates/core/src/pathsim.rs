//! Jump-adapted path simulation.
//!
//! Finite-activity models are simulated on the grid `k * dt` merged with the
//! exact arrival times of every jump above the small-jump cutoff. Jumps below
//! the cutoff are replaced by their mean plus a Gaussian of matched variance.
//! Strictly stable processes use exact Chambers–Mallows–Stuck increments on
//! the plain grid.
//!
//! Simulators are streaming: [`Simulator::run`] hands each point to a
//! callback, which may stop the run early. [`Path`] is the materialized form.

use std::f64::consts::PI;
use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::levy_model::{JumpKind, JumpSide, LevyModel, ProcessSpec, StableParams};
use crate::rng::RngStream;

/// One observation. `value` is the value just after `time`; when `jump` is
/// present the left limit is `value - jump`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub time: f64,
    pub value: f64,
    pub jump: Option<f64>,
}

impl PathPoint {
    pub fn left_limit(&self) -> f64 {
        self.value - self.jump.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpMark {
    pub index: usize,
    pub size: f64,
}

/// A càdlàg trajectory observed on a jump-adapted grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub jump_marks: Vec<JumpMark>,
}

impl Path {
    /// Path without jumps; `times` must start at 0 and increase strictly.
    pub fn from_values(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::with_jumps(times, values, Vec::new())
    }

    pub fn with_jumps(times: Vec<f64>, values: Vec<f64>, mut jump_marks: Vec<JumpMark>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Contract("times and values differ in length".into()));
        }
        if let Some(&t0) = times.first() {
            if t0 != 0.0 {
                return Err(Error::Contract("paths start at time 0".into()));
            }
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Contract("path times must increase strictly".into()));
        }
        jump_marks.sort_by_key(|m| m.index);
        if jump_marks.iter().any(|m| m.index >= times.len() || m.index == 0 || m.size == 0.0) {
            return Err(Error::Contract("jump marks must be nonzero and point inside the path".into()));
        }
        Ok(Self { times, values, jump_marks })
    }

    /// Unit-spaced path, handy for small examples.
    pub fn unit_grid(values: &[f64]) -> Self {
        let times = (0..values.len()).map(|i| i as f64).collect();
        Self { times, values: values.to_vec(), jump_marks: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn origin(&self) -> Option<f64> {
        self.values.first().copied()
    }

    pub fn jump_at(&self, index: usize) -> Option<f64> {
        self.jump_marks
            .binary_search_by_key(&index, |m| m.index)
            .ok()
            .map(|k| self.jump_marks[k].size)
    }

    pub fn left_limit(&self, index: usize) -> f64 {
        self.values[index] - self.jump_at(index).unwrap_or(0.0)
    }

    pub fn points(&self) -> impl Iterator<Item = PathPoint> + '_ {
        let mut marks = self.jump_marks.iter().peekable();
        self.times.iter().zip(&self.values).enumerate().map(move |(i, (&time, &value))| {
            let jump = match marks.peek() {
                Some(m) if m.index == i => marks.next().map(|m| m.size),
                _ => None,
            };
            PathPoint { time, value, jump }
        })
    }

    /// Right-continuous evaluation at `t`.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let k = self.times.partition_point(|&s| s <= t);
        (k > 0).then(|| self.values[k - 1])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,value,jump_flag,jump_size")?;
        for p in self.points() {
            let (flag, size) = p.jump.map_or((0, 0.0), |j| (1, j));
            writeln!(w, "{},{},{},{}", p.time, p.value, flag, size)?;
        }
        Ok(())
    }

    fn push(&mut self, p: &PathPoint) {
        if let Some(size) = p.jump {
            self.jump_marks.push(JumpMark { index: self.times.len(), size });
        }
        self.times.push(p.time);
        self.values.push(p.value);
    }
}

#[derive(Debug, Clone, Copy)]
enum BigJumps {
    None,
    /// Pareto above `threshold` (the cutoff or the scale, whichever is larger).
    Pareto { threshold: f64, theta: f64 },
    /// `threshold + Exp(mean)`.
    Exponential { threshold: f64, mean: f64 },
}

/// Drift + Gaussian + compound Poisson big jumps.
#[derive(Debug, Clone)]
pub struct JumpDiffusion {
    drift: f64,
    diffusion: f64,
    big_rate: f64,
    big: BigJumps,
    two_sided: bool,
    dt: f64,
}

impl JumpDiffusion {
    pub fn new(model: &LevyModel, dt: f64, cutoff: Option<f64>) -> Result<Self> {
        model.validate()?;
        check_dt(dt)?;
        let jumps = &model.jumps;
        let two_sided = jumps.side == JumpSide::TwoSided;
        let compensate = |big_mean: f64| if two_sided { 0.0 } else { big_mean };
        let (drift, small_var, big_rate, big) = match jumps.kind {
            JumpKind::None => (-model.beta_drift, 0.0, 0.0, BigJumps::None),
            JumpKind::CompoundPareto { rate, scale, theta } => {
                let cut = cutoff.unwrap_or(dt.sqrt() * scale);
                let c = cut.max(scale);
                let ts = theta * scale.powf(theta);
                let big_mean = rate * ts * c.powf(1.0 - theta) / (theta - 1.0);
                let small_second = if cut <= scale {
                    0.0
                } else if (theta - 2.0).abs() < 1e-12 {
                    2.0 * scale * scale * (cut / scale).ln()
                } else {
                    ts * (cut.powf(2.0 - theta) - scale.powf(2.0 - theta)) / (2.0 - theta)
                };
                (
                    -model.beta_drift - compensate(big_mean),
                    rate * small_second,
                    rate * (c / scale).powf(-theta),
                    BigJumps::Pareto { threshold: c, theta },
                )
            }
            JumpKind::CompoundExponential { rate, mean } => {
                let c = cutoff.unwrap_or(dt.sqrt() * mean);
                let tail = (-c / mean).exp();
                let big_mean = rate * (c + mean) * tail;
                let small_second = 2.0 * mean * mean - tail * (c * c + 2.0 * c * mean + 2.0 * mean * mean);
                (
                    -model.beta_drift - compensate(big_mean),
                    rate * small_second.max(0.0),
                    rate * tail,
                    BigJumps::Exponential { threshold: c, mean },
                )
            }
            JumpKind::StableJumps { .. } => {
                return Err(Error::Usage(
                    "stable jump parts are simulated by simulate_stable_path".into(),
                ))
            }
        };
        Ok(Self {
            drift,
            diffusion: (model.sigma * model.sigma + small_var).sqrt(),
            big_rate,
            big,
            two_sided,
            dt,
        })
    }

    /// Drift applied between jump arrivals.
    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn diffusion(&self) -> f64 {
        self.diffusion
    }

    pub fn big_jump_rate(&self) -> f64 {
        self.big_rate
    }

    fn next_arrival(&self, t: f64, rng: &mut RngStream) -> f64 {
        if self.big_rate > 0.0 {
            t - rng.open01().ln() / self.big_rate
        } else {
            f64::INFINITY
        }
    }

    fn jump_size(&self, rng: &mut RngStream) -> f64 {
        let y = match self.big {
            BigJumps::None => 0.0,
            BigJumps::Pareto { threshold, theta } => threshold * rng.open01().powf(-1.0 / theta),
            BigJumps::Exponential { threshold, mean } => threshold - mean * rng.open01().ln(),
        };
        if self.two_sided && rng.open01() < 0.5 {
            -y
        } else {
            y
        }
    }

    fn advance(&self, x: f64, h: f64, rng: &mut RngStream) -> f64 {
        let mut x = x + self.drift * h;
        if self.diffusion > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            x += self.diffusion * h.sqrt() * z;
        }
        x
    }

    fn run<F: FnMut(&PathPoint) -> Flow>(&self, horizon: f64, x0: f64, rng: &mut RngStream, mut f: F) {
        let mut x = x0;
        if f(&PathPoint { time: 0.0, value: x, jump: None }) == Flow::Stop {
            return;
        }
        let mut t = 0.0;
        let mut next_jump = self.next_arrival(0.0, rng);
        let mut k: u64 = 1;
        loop {
            let grid = (k as f64 * self.dt).min(horizon);
            let point = if next_jump < grid {
                x = self.advance(x, next_jump - t, rng);
                let size = self.jump_size(rng);
                x += size;
                t = next_jump;
                next_jump = self.next_arrival(t, rng);
                PathPoint { time: t, value: x, jump: Some(size) }
            } else {
                x = self.advance(x, grid - t, rng);
                t = grid;
                k += 1;
                PathPoint { time: t, value: x, jump: None }
            };
            if f(&point) == Flow::Stop || (point.jump.is_none() && t >= horizon) {
                return;
            }
        }
    }
}

/// Exact strictly stable increments by the Chambers–Mallows–Stuck method.
#[derive(Debug, Clone)]
pub struct StableSampler {
    alpha: f64,
    skew_shift: f64,
    skew_scale: f64,
    scale: f64,
    dt: f64,
}

impl StableSampler {
    pub fn new(params: &StableParams, dt: f64) -> Result<Self> {
        params.validate()?;
        check_dt(dt)?;
        let a = params.alpha;
        let beta = params.skew();
        let (skew_shift, skew_scale) = if a == 2.0 || (a - 1.0).abs() < 1e-12 {
            (0.0, 1.0)
        } else {
            let z = beta * (PI * a / 2.0).tan();
            (z.atan() / a, (1.0 + z * z).powf(1.0 / (2.0 * a)))
        };
        Ok(Self { alpha: a, skew_shift, skew_scale, scale: params.scale, dt })
    }

    /// One draw of `Y_1`.
    pub fn sample_unit(&self, rng: &mut RngStream) -> f64 {
        let a = self.alpha;
        if a == 2.0 {
            let z: f64 = StandardNormal.sample(rng);
            return self.scale * std::f64::consts::SQRT_2 * z;
        }
        let v = PI * (rng.open01() - 0.5);
        if (a - 1.0).abs() < 1e-12 {
            return self.scale * v.tan();
        }
        let w = -rng.open01().ln();
        let arg = a * (v + self.skew_shift);
        let x = self.skew_scale * arg.sin() / v.cos().powf(1.0 / a)
            * ((v - arg).cos() / w).powf((1.0 - a) / a);
        self.scale * x
    }

    /// Increment over a step of length `h`.
    pub fn sample_increment(&self, h: f64, rng: &mut RngStream) -> f64 {
        h.powf(1.0 / self.alpha) * self.sample_unit(rng)
    }

    fn run<F: FnMut(&PathPoint) -> Flow>(&self, horizon: f64, x0: f64, rng: &mut RngStream, mut f: F) {
        let mut x = x0;
        if f(&PathPoint { time: 0.0, value: x, jump: None }) == Flow::Stop {
            return;
        }
        let step_scale = self.dt.powf(1.0 / self.alpha);
        let mut t = 0.0;
        let mut k: u64 = 1;
        loop {
            let grid = (k as f64 * self.dt).min(horizon);
            let h = grid - t;
            let inc = if (h - self.dt).abs() <= 1e-12 * self.dt {
                step_scale * self.sample_unit(rng)
            } else {
                self.sample_increment(h, rng)
            };
            x += inc;
            t = grid;
            k += 1;
            if f(&PathPoint { time: t, value: x, jump: None }) == Flow::Stop || t >= horizon {
                return;
            }
        }
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(config(format!("time step must be positive, got {dt}")))
    }
}

fn check_horizon(horizon: f64, dt: f64) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(config(format!("horizon must be positive, got {horizon}")));
    }
    if dt > horizon {
        return Err(config(format!("time step {dt} exceeds horizon {horizon}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Simulator {
    JumpDiffusion(JumpDiffusion),
    Stable(StableSampler),
}

impl Simulator {
    pub fn new(spec: &ProcessSpec, dt: f64, cutoff: Option<f64>) -> Result<Self> {
        Ok(match spec {
            ProcessSpec::Levy(m) => Self::JumpDiffusion(JumpDiffusion::new(m, dt, cutoff)?),
            ProcessSpec::Stable(p) => Self::Stable(StableSampler::new(p, dt)?),
        })
    }

    pub fn dt(&self) -> f64 {
        match self {
            Self::JumpDiffusion(j) => j.dt,
            Self::Stable(s) => s.dt,
        }
    }

    /// Typical size of one grid increment: `diffusion·√dt + |drift|·dt`, or
    /// `scale·dt^{1/α}` for stable laws.
    pub fn increment_scale(&self) -> f64 {
        match self {
            Self::JumpDiffusion(j) => j.diffusion * j.dt.sqrt() + j.drift.abs() * j.dt,
            Self::Stable(s) => s.scale * s.dt.powf(1.0 / s.alpha),
        }
    }

    /// Streams the path on `[0, horizon]` into `f` until it returns [`Flow::Stop`].
    pub fn run<F: FnMut(&PathPoint) -> Flow>(&self, horizon: f64, x0: f64, rng: &mut RngStream, f: F) {
        match self {
            Self::JumpDiffusion(j) => j.run(horizon, x0, rng, f),
            Self::Stable(s) => s.run(horizon, x0, rng, f),
        }
    }

    pub fn path(&self, horizon: f64, x0: f64, rng: &mut RngStream) -> Result<Path> {
        check_horizon(horizon, self.dt())?;
        let mut path = Path::default();
        self.run(horizon, x0, rng, |p| {
            path.push(p);
            Flow::Continue
        });
        Ok(path)
    }
}

pub fn simulate_path(model: &LevyModel, horizon: f64, dt: f64, x0: f64, rng: &mut RngStream) -> Result<Path> {
    check_dt(dt)?;
    Simulator::JumpDiffusion(JumpDiffusion::new(model, dt, None)?).path(horizon, x0, rng)
}

pub fn simulate_stable_path(
    params: &StableParams,
    horizon: f64,
    dt: f64,
    x0: f64,
    rng: &mut RngStream,
) -> Result<Path> {
    check_dt(dt)?;
    Simulator::Stable(StableSampler::new(params, dt)?).path(horizon, x0, rng)
}

/// First observed time at which the path (or its left limit) is below `level`.
pub fn first_passage_below(path: &Path, level: f64) -> Option<f64> {
    path.points()
        .find(|p| p.value < level || p.left_limit() < level)
        .map(|p| p.time)
}
