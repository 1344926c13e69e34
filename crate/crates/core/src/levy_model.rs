//! Process parametrizations and the closed-form laws used as oracles.
//!
//! A [`LevyModel`] is stored in compensated Lévy–Itô form
//!
//! ```text
//! X_t = -beta t + sigma B_t + (compensated jump part)
//! ```
//!
//! so `E[X_1] = -beta` whenever the jump law has a finite mean. Strictly
//! stable processes are described separately by [`StableParams`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{domain, Result};

/// Jump family. The set is closed so that tails, means and samplers stay
/// mutually consistent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpKind {
    None,
    /// Poisson arrivals at `rate`, sizes Pareto with `P(Y >= y) = (y/scale)^-theta`.
    CompoundPareto { rate: f64, scale: f64, theta: f64 },
    /// Poisson arrivals at `rate`, exponential sizes with the given mean.
    CompoundExponential { rate: f64, mean: f64 },
    /// Jump part of a strictly stable law; simulated by the stable sampler only.
    StableJumps { alpha: f64, skew: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpSide {
    /// Mass split evenly between positive and negative jumps.
    TwoSided,
    #[default]
    PositiveOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpLaw {
    #[serde(flatten)]
    pub kind: JumpKind,
    #[serde(default)]
    pub side: JumpSide,
}

impl JumpLaw {
    pub fn none() -> Self {
        Self { kind: JumpKind::None, side: JumpSide::PositiveOnly }
    }

    pub fn pareto(rate: f64, scale: f64, theta: f64) -> Self {
        Self {
            kind: JumpKind::CompoundPareto { rate, scale, theta },
            side: JumpSide::PositiveOnly,
        }
    }

    pub fn exponential(rate: f64, mean: f64) -> Self {
        Self {
            kind: JumpKind::CompoundExponential { rate, mean },
            side: JumpSide::PositiveOnly,
        }
    }

    pub fn two_sided(mut self) -> Self {
        self.side = JumpSide::TwoSided;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(domain(format!("jump {name} must be positive and finite, got {v}")))
            }
        };
        match self.kind {
            JumpKind::None => Ok(()),
            JumpKind::CompoundPareto { rate, scale, theta } => {
                positive("rate", rate)?;
                positive("scale", scale)?;
                if !(theta.is_finite() && theta > 1.0) {
                    return Err(domain(format!("Pareto tail index must exceed 1, got {theta}")));
                }
                Ok(())
            }
            JumpKind::CompoundExponential { rate, mean } => {
                positive("rate", rate)?;
                positive("mean", mean)
            }
            JumpKind::StableJumps { alpha, skew } => {
                if !(alpha > 0.0 && alpha < 2.0) {
                    return Err(domain(format!("stable jump index must lie in (0,2), got {alpha}")));
                }
                if !(-1.0..=1.0).contains(&skew) {
                    return Err(domain(format!("stable skewness must lie in [-1,1], got {skew}")));
                }
                Ok(())
            }
        }
    }

    /// Fraction of the jump mass placed on positive jumps.
    fn positive_weight(&self) -> f64 {
        match self.side {
            JumpSide::PositiveOnly => 1.0,
            JumpSide::TwoSided => 0.5,
        }
    }

    /// Total jump intensity (finite-activity laws only).
    pub fn rate(&self) -> f64 {
        match self.kind {
            JumpKind::None => 0.0,
            JumpKind::CompoundPareto { rate, .. } | JumpKind::CompoundExponential { rate, .. } => rate,
            JumpKind::StableJumps { .. } => f64::INFINITY,
        }
    }

    /// Mean absolute jump size, or infinity when it does not exist.
    pub fn mean_size(&self) -> f64 {
        match self.kind {
            JumpKind::None => 0.0,
            JumpKind::CompoundPareto { scale, theta, .. } => scale * theta / (theta - 1.0),
            JumpKind::CompoundExponential { mean, .. } => mean,
            JumpKind::StableJumps { .. } => f64::INFINITY,
        }
    }

    /// Expected jump contribution per unit time, `∫ y ν(dy)`.
    pub fn mean_rate(&self) -> f64 {
        match self.side {
            JumpSide::TwoSided => 0.0,
            JumpSide::PositiveOnly => match self.kind {
                JumpKind::None => 0.0,
                _ => self.rate() * self.mean_size(),
            },
        }
    }

    pub fn has_finite_mean(&self) -> bool {
        !matches!(self.kind, JumpKind::StableJumps { alpha, .. } if alpha <= 1.0)
    }

    pub fn is_finite_activity(&self) -> bool {
        !matches!(self.kind, JumpKind::StableJumps { .. })
    }

    pub fn has_negative_jumps(&self) -> bool {
        match self.kind {
            JumpKind::None => false,
            JumpKind::StableJumps { skew, .. } => skew < 1.0,
            _ => self.side == JumpSide::TwoSided,
        }
    }

    /// `ν([x, ∞))`.
    pub fn nu_bar(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(domain(format!("tail of the Lévy measure needs x > 0, got {x}")));
        }
        if x.is_infinite() {
            return Ok(0.0);
        }
        let w = self.positive_weight();
        Ok(match self.kind {
            JumpKind::None => 0.0,
            JumpKind::CompoundPareto { rate, scale, theta } => {
                if x < scale {
                    w * rate
                } else {
                    w * rate * (x / scale).powf(-theta)
                }
            }
            JumpKind::CompoundExponential { rate, mean } => w * rate * (-x / mean).exp(),
            JumpKind::StableJumps { alpha, skew } => {
                0.5 * (1.0 + skew) * stable_levy_constant(alpha) * x.powf(-alpha) / alpha
            }
        })
    }
}

/// Constant `C_α` of the Lévy density `C_α (1±β)/2 |x|^{-1-α}` of a unit-scale stable law.
fn stable_levy_constant(alpha: f64) -> f64 {
    if (alpha - 1.0).abs() < 1e-12 {
        2.0 / PI
    } else {
        (1.0 - alpha) / (gamma(2.0 - alpha) * (PI * alpha / 2.0).cos())
    }
}

/// Convenience wrapper for [`JumpLaw::nu_bar`].
pub fn nu_bar(jumps: &JumpLaw, x: f64) -> Result<f64> {
    jumps.nu_bar(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevyModel {
    /// `-E[X_1]`; positive for processes drifting to minus infinity.
    pub beta_drift: f64,
    pub sigma: f64,
    pub jumps: JumpLaw,
}

impl LevyModel {
    pub fn new(beta_drift: f64, sigma: f64, jumps: JumpLaw) -> Result<Self> {
        let m = Self { beta_drift, sigma, jumps };
        m.validate()?;
        Ok(m)
    }

    pub fn brownian(sigma: f64) -> Self {
        Self { beta_drift: 0.0, sigma, jumps: JumpLaw::none() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta_drift.is_finite() {
            return Err(domain("drift must be finite"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(domain(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        self.jumps.validate()
    }

    /// Drift of the uncompensated path between jumps.
    pub fn raw_drift(&self) -> f64 {
        -self.beta_drift - self.jumps.mean_rate()
    }

    pub fn is_spectrally_positive(&self) -> bool {
        !self.jumps.has_negative_jumps()
    }

    /// Whether 0 is regular for `(0, ∞)`, the precondition of the negative-drift results.
    pub fn is_regular_upward(&self) -> bool {
        if self.sigma > 0.0 {
            return true;
        }
        match self.jumps.kind {
            JumpKind::StableJumps { alpha, skew } => alpha >= 1.0 || skew > -1.0,
            // bounded variation: regular upward iff the drift between jumps is positive
            _ => self.raw_drift() > 0.0,
        }
    }

    pub fn drifts_to_minus_infinity(&self) -> bool {
        self.beta_drift > 0.0 && self.jumps.has_finite_mean()
    }

    /// Rejects models outside the negative-drift, heavy-tailed setting.
    pub fn require_negative_drift_regime(&self) -> Result<()> {
        if !self.drifts_to_minus_infinity() {
            return Err(domain("model must have beta_drift > 0 and finite jump mean"));
        }
        if !self.is_regular_upward() {
            return Err(domain("0 must be regular for (0,inf): use sigma > 0 or positive drift between jumps"));
        }
        Ok(())
    }
}

/// Strictly stable law with index `alpha` and negativity parameter `rho = P(Y_1 <= 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub rho: f64,
    #[serde(default)]
    pub spectrally_positive: bool,
    /// Scale per unit time; `Y_1` has characteristic exponent `scale^α |u|^α (1 - iβ tan(πα/2) sgn u)`.
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl StableParams {
    pub fn new(alpha: f64, rho: f64) -> Result<Self> {
        let p = Self { alpha, rho, spectrally_positive: false, scale: 1.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn symmetric(alpha: f64) -> Result<Self> {
        Self::new(alpha, 0.5)
    }

    /// Spectrally positive law with `alpha * rho = 1` and unit scale.
    pub fn spectrally_positive(alpha: f64) -> Result<Self> {
        let p = Self { alpha, rho: 1.0 / alpha, spectrally_positive: true, scale: 1.0 };
        p.validate()?;
        Ok(p)
    }

    /// Spectrally positive law normalized so that `log E[exp(-λ Y_1)] = λ^α`.
    pub fn spectrally_positive_unit_laplace(alpha: f64) -> Result<Self> {
        let mut p = Self::spectrally_positive(alpha)?;
        p.scale = (PI * alpha / 2.0).cos().abs().powf(1.0 / alpha);
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { alpha, rho, .. } = *self;
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(domain(format!("stable index must lie in (0,2], got {alpha}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(domain(format!("negativity parameter must lie in (0,1), got {rho}")));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(domain(format!("stable scale must be positive, got {}", self.scale)));
        }
        let tol = 1e-12;
        if alpha == 2.0 || (alpha - 1.0).abs() < tol {
            if (rho - 0.5).abs() > tol {
                return Err(domain(format!("alpha = {alpha} admits only rho = 1/2")));
            }
        } else if alpha > 1.0 {
            let lo = 1.0 - 1.0 / alpha;
            let hi = 1.0 / alpha;
            if rho < lo - tol || rho > hi + tol {
                return Err(domain(format!("rho must lie in [{lo}, {hi}] for alpha = {alpha}, got {rho}")));
            }
        }
        if self.spectrally_positive && (alpha <= 1.0 || (alpha * rho - 1.0).abs() > tol) {
            return Err(domain("spectrally positive laws need alpha > 1 and alpha * rho = 1"));
        }
        Ok(())
    }

    /// Skewness `β` in the Zolotarev/Samorodnitsky–Taqqu parametrization.
    pub fn skew(&self) -> f64 {
        let a = self.alpha;
        if a == 2.0 || (a - 1.0).abs() < 1e-12 {
            return 0.0;
        }
        if self.spectrally_positive {
            return 1.0;
        }
        let b = (PI * a * (0.5 - self.rho)).tan() / (PI * a / 2.0).tan();
        b.clamp(-1.0, 1.0)
    }

    /// `c(t) = t^{1/α}`.
    pub fn norming(&self, t: f64) -> f64 {
        t.powf(1.0 / self.alpha)
    }

    /// `k` in `log E[exp(-λ Y_1)] = k λ^α`; spectrally positive laws only.
    pub fn laplace_coefficient(&self) -> Result<f64> {
        if !self.spectrally_positive && self.alpha != 2.0 {
            return Err(domain("Laplace exponent exists only for spectrally positive laws"));
        }
        Ok(self.scale.powf(self.alpha) / (PI * self.alpha / 2.0).cos().abs())
    }
}

/// Anything the simulators can run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProcessSpec {
    Levy(LevyModel),
    Stable(StableParams),
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Levy(m) => m.validate(),
            Self::Stable(p) => p.validate(),
        }
    }

    pub fn drifts_to_minus_infinity(&self) -> bool {
        matches!(self, Self::Levy(m) if m.drifts_to_minus_infinity())
    }

    pub fn is_spectrally_positive(&self) -> bool {
        match self {
            Self::Levy(m) => m.is_spectrally_positive(),
            Self::Stable(p) => p.spectrally_positive || p.alpha == 2.0,
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Self::Levy(m) => format!(
                "levy(beta={},sigma={},jumps={:?})",
                m.beta_drift, m.sigma, m.jumps.kind
            ),
            Self::Stable(p) => format!("stable(alpha={},rho={},scale={})", p.alpha, p.rho, p.scale),
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("rho must lie in (0,1), got {rho}")))
    }
}

fn check_alpha_oscillating(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(domain(format!("alpha must lie in (1,2], got {alpha}")))
    }
}

/// Stable excursion lifetime tail `t^{-ρ} / Γ(1-ρ)`.
pub fn stable_lifetime_tail(t: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    if !(t > 0.0) {
        return Err(domain(format!("t must be positive, got {t}")));
    }
    Ok(t.powf(-rho) / gamma(1.0 - rho))
}

/// Brownian `(n(ζ > t), n(ε̄ > x))`.
pub fn brownian_excursion_tails(t: f64, x: f64) -> Result<(f64, f64)> {
    if !(t > 0.0 && x > 0.0) {
        return Err(domain(format!("t and x must be positive, got t={t}, x={x}")));
    }
    Ok((t.powf(-0.5) / (PI / 2.0).sqrt(), 1.0 / x))
}

/// Spectrally positive stable height tail `(α-1)/x`.
pub fn stable_height_tail(x: f64, alpha: f64) -> Result<f64> {
    check_alpha_oscillating(alpha)?;
    if !(x > 0.0) {
        return Err(domain(format!("x must be positive, got {x}")));
    }
    Ok((alpha - 1.0) / x)
}

/// CDF of the limiting scaled jump size, Pareto on `[β, ∞)` with index `θ`.
pub fn pareto_limit_cdf(x: f64, beta: f64, theta: f64) -> f64 {
    if x <= beta {
        0.0
    } else {
        1.0 - (x / beta).powf(-theta)
    }
}

/// `(α-1) Γ(1-1/α)`, the limit of `n(ε̄ > c(t)) / n(ζ > t)` for spectrally positive laws.
pub fn height_lifetime_ratio_constant(alpha: f64) -> Result<f64> {
    check_alpha_oscillating(alpha)?;
    // αΓ(2-1/α) is the same number without the cancellation near α = 1
    Ok(alpha * gamma(2.0 - 1.0 / alpha))
}
