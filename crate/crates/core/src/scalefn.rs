//! Laplace exponents and scale functions of spectrally positive processes.
//!
//! The scale function `W` is characterized by `∫ e^{-λx} W(x) dx = 1/ψ(λ)`
//! with `ψ(λ) = log E[exp(-λ X_1)]`. It is obtained by Gaver–Stehfest
//! inversion of `1/ψ`, except for stable laws where `W(x) = x^{α-1}/(kΓ(α))`
//! is used directly. The excursion height tail is `d/dx log W`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{checked_gamma_ui, gamma};

use crate::error::{domain, Error, Result};
use crate::levy_model::{JumpKind, JumpSide, LevyModel, ProcessSpec, StableParams};

#[derive(Debug, Clone, Copy, PartialEq)]
enum PositiveJumps {
    None,
    Pareto { rate: f64, scale: f64, theta: f64 },
    Exponential { rate: f64, mean: f64 },
}

/// `ψ(λ) = log E[exp(-λ X_1)]` of a spectrally positive process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaplaceExponent {
    JumpDiffusion { beta: f64, sigma: f64, jumps: PositiveJumpsHandle },
    /// `ψ(λ) = coefficient · λ^α`.
    Stable { coefficient: f64, alpha: f64 },
}

/// Opaque wrapper so the jump variants stay private.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveJumpsHandle(PositiveJumps);

impl LaplaceExponent {
    pub fn from_model(model: &LevyModel) -> Result<Self> {
        model.validate()?;
        let jumps = match model.jumps.kind {
            JumpKind::None => PositiveJumps::None,
            _ if model.jumps.side == JumpSide::TwoSided => {
                return Err(Error::Unsupported("Laplace exponent needs positive jumps only".into()))
            }
            JumpKind::CompoundPareto { rate, scale, theta } => PositiveJumps::Pareto { rate, scale, theta },
            JumpKind::CompoundExponential { rate, mean } => PositiveJumps::Exponential { rate, mean },
            JumpKind::StableJumps { .. } => {
                return Err(Error::Unsupported("use StableParams for stable laws".into()))
            }
        };
        Ok(Self::JumpDiffusion { beta: model.beta_drift, sigma: model.sigma, jumps: PositiveJumpsHandle(jumps) })
    }

    pub fn from_stable(params: &StableParams) -> Result<Self> {
        params.validate()?;
        Ok(Self::Stable { coefficient: params.laplace_coefficient()?, alpha: params.alpha })
    }

    pub fn from_spec(spec: &ProcessSpec) -> Result<Self> {
        match spec {
            ProcessSpec::Levy(m) => Self::from_model(m),
            ProcessSpec::Stable(p) => Self::from_stable(p),
        }
    }

    pub fn eval(&self, lambda: f64) -> Result<f64> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(domain(format!("Laplace exponent needs λ >= 0, got {lambda}")));
        }
        if lambda == 0.0 {
            return Ok(0.0);
        }
        Ok(match *self {
            Self::Stable { coefficient, alpha } => coefficient * lambda.powf(alpha),
            Self::JumpDiffusion { beta, sigma, jumps } => {
                let jump_part = match jumps.0 {
                    PositiveJumps::None => 0.0,
                    PositiveJumps::Exponential { rate, mean } => {
                        rate * mean * mean * lambda * lambda / (1.0 + mean * lambda)
                    }
                    PositiveJumps::Pareto { rate, scale, theta } => {
                        rate * pareto_compensated_transform(lambda, scale, theta)?
                    }
                };
                beta * lambda + 0.5 * sigma * sigma * lambda * lambda + jump_part
            }
        })
    }

    pub fn stable_alpha(&self) -> Option<(f64, f64)> {
        match *self {
            Self::Stable { coefficient, alpha } => Some((coefficient, alpha)),
            _ => None,
        }
    }
}

pub fn laplace_exponent(model: &LevyModel, lambda: f64) -> Result<f64> {
    LaplaceExponent::from_model(model)?.eval(lambda)
}

/// `E[e^{-λY} - 1 + λY]` for `Y` Pareto with scale `s` and index `θ`.
///
/// Equals `θ a^θ I(a)` with `a = λs` and
/// `I(a) = Γ(-θ, a) - a^{-θ}/θ + a^{1-θ}/(θ-1)`.
fn pareto_compensated_transform(lambda: f64, s: f64, theta: f64) -> Result<f64> {
    let a = lambda * s;
    let near_integer = (theta - theta.round()).abs() < 1e-6;
    let i = if near_integer || a < 1e-6 {
        compensated_integral_quadrature(a, theta)
    } else {
        upper_gamma_negative(-theta, a)? - a.powf(-theta) / theta + a.powf(1.0 - theta) / (theta - 1.0)
    };
    Ok(theta * a.powf(theta) * i)
}

/// `Γ(s, a)` for non-integer negative `s`, by downward recurrence from a positive order.
fn upper_gamma_negative(s: f64, a: f64) -> Result<f64> {
    let n = (-s).floor() as i32 + 1;
    let mut order = s + n as f64;
    let mut g = checked_gamma_ui(order, a).map_err(|e| domain(format!("incomplete gamma: {e}")))?;
    let ln_a = a.ln();
    for _ in 0..n {
        // Γ(o-1, a) = (Γ(o, a) - a^{o-1} e^{-a}) / (o-1)
        order -= 1.0;
        g = (g - (order * ln_a - a).exp()) / order;
    }
    Ok(g)
}

/// `∫_a^∞ (e^{-u} - 1 + u) u^{-θ-1} du` by Simpson's rule in `v = ln u`.
fn compensated_integral_quadrature(a: f64, theta: f64) -> f64 {
    let lo = a.max(1e-300).ln().max(-40.0);
    let hi = (lo + 20.0).max(0.0) + 60.0 / (theta - 1.0).max(0.05);
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let f = |v: f64| {
        let u = v.exp();
        (u + (-u).exp_m1()) * u.powf(-theta)
    };
    let mut sum = f(lo) + f(hi);
    for k in 1..n {
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lo + k as f64 * h);
    }
    let mut total = sum * h / 3.0;
    if a < lo.exp() {
        // below e^-40 the integrand is u^{1-θ}/2 to leading order
        total += 0.5 * (lo.exp().powf(2.0 - theta) - a.powf(2.0 - theta)) / (2.0 - theta);
    }
    total
}

/// Gaver–Stehfest weights `V_1..V_N` for even `N`.
pub fn stehfest_weights(order: usize) -> Result<Vec<f64>> {
    if order < 2 || order % 2 == 1 || order > 40 {
        return Err(domain(format!("Stehfest order must be even in [2, 40], got {order}")));
    }
    let half = order / 2;
    let fact = |n: usize| (1..=n).fold(1.0f64, |acc, k| acc * k as f64);
    Ok((1..=order)
        .map(|k| {
            let lo = k.div_ceil(2);
            let hi = k.min(half);
            let sum: f64 = (lo..=hi)
                .map(|j| {
                    (j as f64).powi(half as i32) * fact(2 * j)
                        / (fact(half - j) * fact(j) * fact(j - 1) * fact(k - j) * fact(2 * j - k))
                })
                .sum();
            if (k + half) % 2 == 0 {
                sum
            } else {
                -sum
            }
        })
        .collect())
}

/// Inverts the Laplace transform `transform` at `x > 0`.
pub fn gaver_stehfest<F>(transform: F, x: f64, weights: &[f64]) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let ln2_x = std::f64::consts::LN_2 / x;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w * transform((k + 1) as f64 * ln2_x)?;
    }
    Ok(acc * ln2_x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleOptions {
    pub order: usize,
    /// Invert numerically even when a closed form exists.
    pub force_numeric: bool,
}

impl Default for ScaleOptions {
    fn default() -> Self {
        Self { order: 14, force_numeric: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFunctionTable {
    pub grid: Vec<f64>,
    pub w: Vec<f64>,
    /// `d log W / d log x`; `None` at the two points nearest each end.
    pub log_slope: Vec<Option<f64>>,
    /// `d/dx log W`, the excursion height tail.
    pub height_tail: Vec<Option<f64>>,
}

impl ScaleFunctionTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,W,log_slope,height_tail")?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for i in 0..self.grid.len() {
            writeln!(out, "{},{},{},{}", self.grid[i], self.w[i], opt(self.log_slope[i]), opt(self.height_tail[i]))?;
        }
        Ok(())
    }
}

pub fn scale_function(exponent: &LaplaceExponent, grid: &[f64], opts: ScaleOptions) -> Result<ScaleFunctionTable> {
    if grid.len() < 5 {
        return Err(Error::InsufficientData { what: "scale function grid".into(), have: grid.len(), need: 5 });
    }
    if grid[0] <= 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(domain("grid must be positive and strictly increasing"));
    }
    let w: Vec<f64> = match (exponent.stable_alpha(), opts.force_numeric) {
        (Some((k, alpha)), false) => {
            let c = 1.0 / (k * gamma(alpha));
            grid.iter().map(|x| c * x.powf(alpha - 1.0)).collect()
        }
        _ => {
            let weights = stehfest_weights(opts.order)?;
            let inv = |lambda: f64| exponent.eval(lambda).map(|p| 1.0 / p);
            grid.iter().map(|&x| gaver_stehfest(inv, x, &weights)).collect::<Result<_>>()?
        }
    };
    if let Some(i) = (0..w.len()).find(|&i| !(w[i] > 0.0) || (i > 0 && !(w[i] > w[i - 1]))) {
        return Err(Error::Inversion(format!(
            "W not positive and increasing at x = {} (order {}); lower the order or use the stable closed form",
            grid[i], opts.order
        )));
    }
    let n = grid.len();
    let mut height_tail = vec![None; n];
    let mut log_slope = vec![None; n];
    for i in 2..n - 2 {
        let d = match (exponent.stable_alpha(), opts.force_numeric) {
            (Some((_, alpha)), false) => (alpha - 1.0) / grid[i],
            // (log W)' = W'/W; the stencil on W itself is exact for W of degree <= 4
            _ => five_point_derivative(&grid[i - 2..=i + 2], &w[i - 2..=i + 2]) / w[i],
        };
        height_tail[i] = Some(d);
        log_slope[i] = Some(d * grid[i]);
    }
    Ok(ScaleFunctionTable { grid: grid.to_vec(), w, log_slope, height_tail })
}

/// Derivative at the middle node from Lagrange interpolation through five
/// nodes; the classic `(-f₂ + 8f₁ - 8f₋₁ + f₋₂)/12h` stencil on uniform grids.
fn five_point_derivative(x: &[f64], f: &[f64]) -> f64 {
    let x0 = x[2];
    let mut d = 0.0;
    for j in 0..5 {
        // L_j'(x0) for the Lagrange basis polynomial L_j
        let mut lj = 0.0;
        for m in 0..5 {
            if m == j {
                continue;
            }
            let mut prod = 1.0 / (x[j] - x[m]);
            for l in 0..5 {
                if l != j && l != m {
                    prod *= (x0 - x[l]) / (x[j] - x[l]);
                }
            }
            lj += prod;
        }
        d += f[j] * lj;
    }
    d
}

/// `n(ε̄ > x)` read off the table; `x` must lie between interior stencil points.
pub fn height_tail_from_w(table: &ScaleFunctionTable, x: f64) -> Result<f64> {
    let n = table.grid.len();
    let (lo, hi) = (table.grid[2], table.grid[n - 3]);
    let tol = 1e-12 * x.abs().max(1.0);
    if !(x >= lo - tol && x <= hi + tol) {
        return Err(domain(format!("x = {x} outside the interior [{lo}, {hi}] of the grid")));
    }
    let k = table.grid.partition_point(|&g| g < x - tol);
    if (table.grid[k] - x).abs() <= tol {
        return Ok(table.height_tail[k].expect("interior point"));
    }
    let (x0, x1) = (table.grid[k - 1], table.grid[k]);
    let (h0, h1) = (table.height_tail[k - 1].expect("interior"), table.height_tail[k].expect("interior"));
    Ok(h0 + (h1 - h0) * (x - x0) / (x1 - x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::JumpLaw;
    use approx::assert_relative_eq;

    fn lin(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    /// Cramér–Lundberg scale function from partial fractions of 1/ψ:
    /// W(x) = (1/β)(1 - (r m / c) e^{-β x / (m c)}) with c = β + r m.
    fn cramer_lundberg_w(beta: f64, rate: f64, mean: f64, x: f64) -> f64 {
        let c = beta + rate * mean;
        (1.0 - rate * mean / c * (-beta * x / (mean * c)).exp()) / beta
    }

    #[test]
    fn simple_exponents() {
        let drift = LevyModel::new(1.0, 0.0, JumpLaw::none()).unwrap();
        assert_eq!(laplace_exponent(&drift, 2.5).unwrap(), 2.5);
        let bm = LevyModel::new(0.0, 2f64.sqrt(), JumpLaw::none()).unwrap();
        assert_relative_eq!(laplace_exponent(&bm, 3.0).unwrap(), 9.0, max_relative = 1e-14);
        assert_eq!(laplace_exponent(&bm, 0.0).unwrap(), 0.0);
        let two = LevyModel::new(0.0, 1.0, JumpLaw::exponential(1.0, 1.0).two_sided()).unwrap();
        assert!(matches!(laplace_exponent(&two, 1.0), Err(Error::Unsupported(_))));
    }

    /// Simpson integration of (e^{-λy} - 1 + λy) ν(dy) against the closed forms.
    fn jump_part_by_quadrature(density: impl Fn(f64) -> f64, lambda: f64, lo: f64, hi: f64) -> f64 {
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        let g = |y: f64| (lambda * y + (-lambda * y).exp_m1()) * density(y);
        let mut s = g(lo) + g(hi);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * g(lo + k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn exponential_jump_exponent_matches_integral() {
        let (r, m, beta) = (1.7, 0.4, 0.3);
        let model = LevyModel::new(beta, 0.0, JumpLaw::exponential(r, m)).unwrap();
        for lambda in [0.1, 1.0, 7.0] {
            let q = jump_part_by_quadrature(|y| r * (-y / m).exp() / m, lambda, 0.0, 40.0 * m);
            let psi = laplace_exponent(&model, lambda).unwrap();
            assert_relative_eq!(psi, beta * lambda + q, max_relative = 1e-9);
        }
    }

    #[test]
    fn pareto_jump_exponent_matches_integral() {
        for &(theta, s) in &[(1.5, 0.3), (2.5, 1.0), (1.2, 0.05), (2.0, 0.5)] {
            let r = 0.8;
            let model = LevyModel::new(1.0, 0.0, JumpLaw::pareto(r, s, theta)).unwrap();
            for lambda in [0.05, 1.0, 9.0] {
                // y = s e^v substitution keeps the heavy tail tractable
                let n = 200_000;
                let hi = 80.0 / (theta - 1.0);
                let h = hi / n as f64;
                let g = |v: f64| {
                    let y = s * f64::exp(v);
                    (lambda * y + (-lambda * y).exp_m1()) * r * theta * s.powf(theta) * y.powf(-theta)
                };
                let mut acc = g(0.0) + g(hi);
                for k in 1..n {
                    acc += if k % 2 == 1 { 4.0 } else { 2.0 } * g(k as f64 * h);
                }
                let q = acc * h / 3.0;
                let psi = laplace_exponent(&model, lambda).unwrap();
                assert_relative_eq!(psi, lambda + q, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn exponent_is_convex() {
        let models = [
            LevyModel::new(0.5, 0.3, JumpLaw::pareto(0.6, 0.2, 1.5)).unwrap(),
            LevyModel::new(0.2, 0.0, JumpLaw::exponential(2.0, 0.7)).unwrap(),
        ];
        for m in models {
            let psi = LaplaceExponent::from_model(&m).unwrap();
            let grid = lin(0.01, 20.0, 300);
            let v: Vec<f64> = grid.iter().map(|&l| psi.eval(l).unwrap()).collect();
            for i in 1..v.len() - 1 {
                assert!(v[i + 1] - 2.0 * v[i] + v[i - 1] >= -1e-10 * v[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn stehfest_weights_sum_to_zero() {
        for n in [8, 12, 14, 16] {
            let w = stehfest_weights(n).unwrap();
            assert!(w.iter().sum::<f64>().abs() < 1e-6 * w.iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
        assert!(stehfest_weights(7).is_err());
    }

    #[test]
    fn brownian_scale_function_is_linear() {
        let bm = LevyModel::new(0.0, 2f64.sqrt(), JumpLaw::none()).unwrap();
        let psi = LaplaceExponent::from_model(&bm).unwrap();
        let grid = lin(0.1, 10.0, 100);
        let t = scale_function(&psi, &grid, ScaleOptions::default()).unwrap();
        for (x, w) in grid.iter().zip(&t.w) {
            assert!((w / x - 1.0).abs() < 1e-6, "x={x} w={w}");
        }
    }

    #[test]
    fn cramer_lundberg_matches_partial_fractions() {
        // the order-14 error grows with the decay rate β/(m(β + r m)) of the
        // exponential term; the first set decays slowly, the second faster
        for &(beta, r, m, tol) in &[(0.25, 1.0, 2.0, 1e-6), (0.5, 1.0, 1.0, 5e-5)] {
            let model = LevyModel::new(beta, 0.0, JumpLaw::exponential(r, m)).unwrap();
            let psi = LaplaceExponent::from_model(&model).unwrap();
            let grid = lin(0.1, 10.0, 100);
            let t = scale_function(&psi, &grid, ScaleOptions::default()).unwrap();
            for (x, w) in grid.iter().zip(&t.w) {
                let exact = cramer_lundberg_w(beta, r, m, *x);
                assert!((w / exact - 1.0).abs() <= tol, "x={x} rel={}", w / exact - 1.0);
            }
        }
    }

    #[test]
    fn stable_closed_form_and_height_tail() {
        let p = StableParams::spectrally_positive_unit_laplace(1.5).unwrap();
        let psi = LaplaceExponent::from_stable(&p).unwrap();
        let grid = lin(0.5, 4.0, 36);
        let t = scale_function(&psi, &grid, ScaleOptions::default()).unwrap();
        let at1 = grid.iter().position(|&x| (x - 1.0).abs() < 1e-12).unwrap();
        assert_relative_eq!(t.w[at1], 2.0 / std::f64::consts::PI.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(height_tail_from_w(&t, 2.0).unwrap(), 0.25, max_relative = 1e-6);
        for i in 0..grid.len() {
            assert_relative_eq!(t.w[i] * gamma(1.5) / grid[i].sqrt(), 1.0, max_relative = 1e-12);
        }

        let bm = StableParams::symmetric(2.0).unwrap();
        let t2 = scale_function(&LaplaceExponent::from_stable(&bm).unwrap(), &grid, ScaleOptions::default()).unwrap();
        assert_relative_eq!(height_tail_from_w(&t2, 1.0).unwrap(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn numeric_stable_inversion_agrees_with_closed_form() {
        let p = StableParams::spectrally_positive_unit_laplace(1.5).unwrap();
        let psi = LaplaceExponent::from_stable(&p).unwrap();
        let grid = lin(10.0, 100.0, 91);
        let opts = ScaleOptions { order: 14, force_numeric: true };
        let t = scale_function(&psi, &grid, opts).unwrap();
        for (x, w) in grid.iter().zip(&t.w) {
            assert_relative_eq!(*w, x.sqrt() / gamma(1.5), max_relative = 1e-6);
        }
        let lx: Vec<f64> = grid.iter().map(|x| x.ln()).collect();
        let lw: Vec<f64> = t.w.iter().map(|w| w.ln()).collect();
        let fit = crate::stats::slope_fit(&lx, &lw, (f64::NEG_INFINITY, f64::INFINITY)).unwrap();
        assert!((fit.slope - 0.5).abs() < 0.05);
        let x_far = 96.0;
        let h = height_tail_from_w(&t, x_far).unwrap();
        assert!((x_far * h - 0.5).abs() < 0.005);
    }

    #[test]
    fn linear_w_gives_reciprocal_tail() {
        let grid = lin(0.2, 5.0, 25);
        let table = ScaleFunctionTable {
            grid: grid.clone(),
            w: grid.clone(),
            log_slope: vec![None; 25],
            height_tail: vec![None; 25],
        };
        let mut t = table;
        for i in 2..23 {
            t.height_tail[i] = Some(five_point_derivative(&grid[i - 2..=i + 2], &t.w[i - 2..=i + 2]) / t.w[i]);
        }
        for i in 3..22 {
            assert_relative_eq!(height_tail_from_w(&t, grid[i]).unwrap(), 1.0 / grid[i], max_relative = 1e-12);
        }
        assert!(height_tail_from_w(&t, grid[0]).is_err());
        assert!(height_tail_from_w(&t, grid[24]).is_err());
    }

    #[test]
    fn laplace_round_trip() {
        let model = LevyModel::new(0.4, 0.5, JumpLaw::exponential(1.0, 0.5)).unwrap();
        let psi = LaplaceExponent::from_model(&model).unwrap();
        // beyond x ≈ 29 the inversion noise exceeds the growth of W here
        let upper = 24.0;
        let n = 1200;
        let grid: Vec<f64> = (1..=n).map(|i| upper * i as f64 / n as f64).collect();
        let t = scale_function(&psi, &grid, ScaleOptions::default()).unwrap();
        for lambda in [1.0, 2.0, 5.0] {
            // Simpson on [0, upper] with W(0) = 0 for sigma > 0
            let h = upper / n as f64;
            let f = |i: usize| if i == 0 { 0.0 } else { (-lambda * grid[i - 1]).exp() * t.w[i - 1] };
            let mut s = f(0) + f(n);
            for i in 1..n {
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i);
            }
            let integral = s * h / 3.0;
            let target = 1.0 / psi.eval(lambda).unwrap();
            assert!((integral / target - 1.0).abs() <= 1e-4, "λ={lambda} rel={}", integral / target - 1.0);
        }
    }

    #[test]
    fn csv_columns() {
        let p = StableParams::spectrally_positive_unit_laplace(1.5).unwrap();
        let t = scale_function(&LaplaceExponent::from_stable(&p).unwrap(), &lin(1.0, 5.0, 5), ScaleOptions::default()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "x,W,log_slope,height_tail");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].ends_with(",,"));
        assert!(!lines[3].ends_with(','));
    }
}
