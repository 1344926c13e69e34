//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::levy_model::{JumpKind, LevyModel, ProcessSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ClosedForms,
    BrownianBaseline,
    Arcsine,
    Meander,
    HeightTail,
    Equivalence,
    BigJump,
    DriftProfile,
    ConditionedStart,
    Scalefn,
}

impl ExperimentKind {
    pub const ALL: [Self; 10] = [
        Self::ClosedForms,
        Self::BrownianBaseline,
        Self::Arcsine,
        Self::Meander,
        Self::HeightTail,
        Self::Equivalence,
        Self::BigJump,
        Self::DriftProfile,
        Self::ConditionedStart,
        Self::Scalefn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ClosedForms => "closed_forms",
            Self::BrownianBaseline => "brownian_baseline",
            Self::Arcsine => "arcsine",
            Self::Meander => "meander",
            Self::HeightTail => "height_tail",
            Self::Equivalence => "equivalence",
            Self::BigJump => "big_jump",
            Self::DriftProfile => "drift_profile",
            Self::ConditionedStart => "conditioned_start",
            Self::Scalefn => "scalefn",
        }
    }
}

/// Simulation budget. Unset fields fall back to per-experiment defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    /// Length of each simulated path.
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    /// Independent paths.
    pub replicas: Option<usize>,
    /// Conditioned draws per level, or first-passage draws.
    pub samples: Option<usize>,
    /// Open excursions and conditioned paths are followed for at most this
    /// multiple of the conditioning time.
    pub cap_factor: Option<f64>,
    /// Small-jump cutoff; default `sqrt(dt)` times the jump scale.
    pub cutoff: Option<f64>,
    /// Paths written by `--dump-paths`.
    pub dump_limit: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Conditioning times.
    pub t: Option<Vec<f64>>,
    /// Minimum kept lifetime.
    pub delta: Option<f64>,
    pub zero_tol: Option<f64>,
    /// Start of rejection sampling, as a fraction of the conditioning scale.
    pub x0_fraction: Option<f64>,
    /// Fixed start level.
    pub x: Option<f64>,
    /// Height levels.
    pub heights: Option<Vec<f64>>,
    /// Top order statistics used by the Hill estimator.
    pub hill_k: Option<usize>,
    /// Spatial grid for scale functions: `[lo, hi, points]`, log-spaced.
    pub grid: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: Option<ProcessSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub shards: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            model: None,
            seed: 0,
            shards: 1,
            out: None,
            budget: Budget::default(),
            thresholds: Thresholds::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config(e.to_string()))
    }

    pub fn levels(&self) -> &[f64] {
        self.thresholds.t.as_deref().unwrap_or(&[])
    }

    fn model(&self) -> Result<&ProcessSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| config(format!("experiment {} needs a [model] section", self.experiment.name())))
    }

    /// Checks everything that can be checked before simulating.
    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        if self.shards == 0 {
            return Err(config("shards must be positive"));
        }
        if let Some(m) = &self.model {
            m.validate().map_err(|e| config(format!("model: {e}")))?;
        }
        let b = &self.budget;
        for (name, v) in [("horizon", b.horizon), ("dt", b.dt), ("cap_factor", b.cap_factor), ("cutoff", b.cutoff)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(config(format!("budget.{name} must be positive, got {v}")));
                }
            }
        }
        for (name, v) in [("replicas", b.replicas), ("samples", b.samples)] {
            if v == Some(0) {
                return Err(config(format!("budget.{name} must be positive")));
            }
        }
        let th = &self.thresholds;
        if let Some(ts) = &th.t {
            if ts.is_empty() || ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(config("thresholds.t must be a nonempty list of positive times"));
            }
        }
        if let (Some(delta), Some(dt)) = (th.delta, b.dt) {
            if delta < dt {
                return Err(config(format!("minimum lifetime delta = {delta} is below dt = {dt}")));
            }
        }
        if let Some(z) = th.zero_tol {
            if !(z >= 0.0) {
                return Err(config("zero_tol must be nonnegative"));
            }
        }
        if let Some(f) = th.x0_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(config(format!(
                    "start x0 must lie strictly below the conditioning scale (fraction {f} not in (0,1))"
                )));
            }
        }
        if let Some(x) = th.x {
            if !(x > 0.0) {
                return Err(config("start level x must be positive"));
            }
        }
        if let Some([lo, hi, n]) = th.grid {
            if !(lo > 0.0 && hi > lo && n >= 5.0) {
                return Err(config("grid must be [lo, hi, points] with 0 < lo < hi and points >= 5"));
            }
        }

        match self.experiment {
            ClosedForms => {}
            Scalefn => {
                if let Some(m) = &self.model {
                    if !m.is_spectrally_positive() {
                        return Err(config("scalefn needs a spectrally positive model"));
                    }
                }
            }
            BrownianBaseline | Arcsine => {
                if !is_brownian(self.model()?) {
                    return Err(config(format!("{} needs a Brownian model", self.experiment.name())));
                }
            }
            Meander => match self.model()? {
                ProcessSpec::Stable(p) if p.alpha > 1.0 => {}
                _ => return Err(config("meander needs a stable model with alpha > 1")),
            },
            HeightTail => match self.model()? {
                ProcessSpec::Stable(p) if p.spectrally_positive && p.alpha > 1.0 && p.alpha < 2.0 => {}
                _ => return Err(config("height_tail needs a spectrally positive stable model with 1 < alpha < 2")),
            },
            Equivalence | BigJump | DriftProfile | ConditionedStart => {
                heavy_tailed_negative_drift(self.model()?)?;
            }
        }
        if self.experiment == ConditionedStart && th.x.is_none() {
            return Err(config("conditioned_start needs thresholds.x"));
        }
        Ok(())
    }
}

fn is_brownian(spec: &ProcessSpec) -> bool {
    match spec {
        ProcessSpec::Levy(m) => m.beta_drift == 0.0 && m.sigma > 0.0 && m.jumps.kind == JumpKind::None,
        ProcessSpec::Stable(p) => p.alpha == 2.0,
    }
}

/// The model must drift to -∞ and carry Pareto jumps with `θ > 1`.
pub(crate) fn heavy_tailed_negative_drift(spec: &ProcessSpec) -> Result<(LevyModel, f64)> {
    let ProcessSpec::Levy(m) = spec else {
        return Err(config("this experiment needs a jump-diffusion model"));
    };
    if !(m.beta_drift > 0.0) {
        return Err(config(format!("beta_drift must be positive, got {}", m.beta_drift)));
    }
    m.require_negative_drift_regime().map_err(|e| config(e.to_string()))?;
    match m.jumps.kind {
        JumpKind::CompoundPareto { theta, .. } if theta > 1.0 => Ok((*m, theta)),
        JumpKind::CompoundPareto { theta, .. } => Err(config(format!("Pareto index must exceed 1, got {theta}"))),
        _ => Err(Error::Config("this experiment needs compound Pareto jumps".into())),
    }
}
