//! Distribution comparison and tail estimation kernels.
//!
//! KS statistics are reported raw. Excursions cut from one long path are
//! weakly dependent, so i.i.d. p-values would be misleading; thresholds are
//! fixed by the callers instead.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Sorted samples with positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(samples: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut samples: Vec<f64> = samples.into_iter().collect();
        if samples.is_empty() {
            return Err(Error::InsufficientData { what: "empirical distribution".into(), have: 0, need: 1 });
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(domain("NaN sample"));
        }
        samples.sort_by(f64::total_cmp);
        let w = 1.0 / samples.len() as f64;
        let weights = vec![w; samples.len()];
        Ok(Self { samples, weights })
    }

    pub fn weighted(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = pairs.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::InsufficientData { what: "empirical distribution".into(), have: 0, need: 1 });
        }
        if pairs.iter().any(|&(x, w)| x.is_nan() || !(w > 0.0) || !w.is_finite()) {
            return Err(domain("weights must be positive and samples not NaN"));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let (samples, weights) = pairs.into_iter().map(|(x, w)| (x, w / total)).unzip();
        Ok(Self { samples, weights })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `F(x) = P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.samples.partition_point(|&s| s <= x);
        self.weights[..k].iter().sum::<f64>().min(1.0)
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }

    /// Lower quantile `inf{x : F(x) >= p}`.
    pub fn quantile(&self, p: f64) -> f64 {
        let mut acc = 0.0;
        for (x, w) in self.samples.iter().zip(&self.weights) {
            acc += w;
            if acc >= p - 1e-12 {
                return *x;
            }
        }
        *self.samples.last().expect("nonempty")
    }
}

/// `sup |F_a - F_b|` over the pooled support.
pub fn ks_two_sample(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    let (xa, wa) = (&a.samples, &a.weights);
    let (xb, wb) = (&b.samples, &b.weights);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut d = 0.0f64;
    while i < xa.len() || j < xb.len() {
        let v = match (xa.get(i), xb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < xa.len() && xa[i] == v {
            fa += wa[i];
            i += 1;
        }
        while j < xb.len() && xb[j] == v {
            fb += wb[j];
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    d.min(1.0)
}

/// One-sample KS statistic against a CDF.
pub fn ks_vs_cdf<F: Fn(f64) -> f64>(a: &EmpiricalDistribution, cdf: F) -> Result<f64> {
    let mut d = 0.0f64;
    let mut below = 0.0f64;
    let mut prev_f = f64::NEG_INFINITY;
    let xs = &a.samples;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut above = below;
        while i < xs.len() && xs[i] == x {
            above += a.weights[i];
            i += 1;
        }
        let f = cdf(x);
        let f_left = cdf(x - 1e-12 * x.abs().max(1.0));
        if !(0.0..=1.0).contains(&f) || f + 1e-12 < prev_f || f_left > f + 1e-12 {
            return Err(domain(format!("reference CDF is not monotone in [0,1] near x = {x}")));
        }
        prev_f = f;
        d = d.max((above - f).abs()).max((below - f_left).abs());
        below = above;
    }
    Ok(d.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillEstimate {
    pub theta: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub k: usize,
}

/// Default number of upper order statistics, `⌊n^0.6⌋`.
pub fn default_hill_k(n: usize) -> usize {
    (n as f64).powf(0.6).floor() as usize
}

/// Hill estimator of the tail index from the `k` largest samples.
pub fn hill_estimator(a: &EmpiricalDistribution, k: usize) -> Result<HillEstimate> {
    let n = a.len();
    if k < 10 || k >= n {
        return Err(Error::InsufficientData { what: "Hill estimator (need 10 <= k < n)".into(), have: n, need: k.max(10) + 1 });
    }
    let xs = &a.samples;
    let threshold = xs[n - k - 1];
    if !(threshold > 0.0) {
        return Err(domain("Hill estimator needs positive upper order statistics"));
    }
    let sum: f64 = xs[n - k..].iter().map(|x| (x / threshold).ln()).sum();
    if !(sum > 0.0) {
        return Err(domain("Hill estimator undefined: top order statistics are all equal"));
    }
    let theta = k as f64 / sum;
    let half = 1.96 / (k as f64).sqrt();
    Ok(HillEstimate { theta, ci_lo: theta * (1.0 - half), ci_hi: theta * (1.0 + half), k })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Ordinary least squares on the points with `times` inside `window`.
pub fn slope_fit(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| (*t, *v))
        .collect();
    let n = pts.len();
    if n < 10 {
        return Err(Error::InsufficientData { what: "slope fit window".into(), have: n, need: 10 });
    }
    let nf = n as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if !(sxx > 1e-300 * nf) {
        return Err(domain("slope fit needs distinct times"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
    let slope = sxy / sxx;
    let intercept = mv - slope * mt;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (rss / (nf - 2.0) / sxx).sqrt();
    Ok(SlopeFit { slope, intercept, stderr, n })
}

/// Percentile (2.5%, 97.5%) bootstrap interval of `stat`.
pub fn bootstrap_ci<F, R>(stat: F, data: &[f64], resamples: usize, rng: &mut R) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if resamples < 100 {
        return Err(Error::InsufficientData { what: "bootstrap resamples".into(), have: resamples, need: 100 });
    }
    if data.is_empty() {
        return Err(Error::InsufficientData { what: "bootstrap sample".into(), have: 0, need: 1 });
    }
    let n = data.len();
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = data[rng.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok((percentile_sorted(&stats, 0.025), percentile_sorted(&stats, 0.975)))
}

/// Linear-interpolated percentile of sorted data.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample Pearson correlation.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InsufficientData { what: "correlation".into(), have: xs.len().min(ys.len()), need: 3 });
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(domain("correlation undefined for constant input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Wilson score interval at 95% for `successes / n`.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn ed(xs: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::new(xs.iter().copied()).unwrap()
    }

    /// Evaluates both ECDFs at every pooled point.
    fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
        let f = |xs: &[f64], x: f64| xs.iter().filter(|&&s| s <= x).count() as f64 / xs.len() as f64;
        a.iter().chain(b).map(|&x| (f(a, x) - f(b, x)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn ks_two_sample_examples() {
        assert_eq!(ks_two_sample(&ed(&[1.0, 2.0, 3.0]), &ed(&[1.0, 2.0, 3.0])), 0.0);
        assert_eq!(ks_two_sample(&ed(&[1.0, 2.0]), &ed(&[5.0, 6.0, 7.0])), 1.0);
        assert_eq!(ks_brute(&[1.0, 2.0], &[1.0, 3.0]), 0.5);
        assert_eq!(ks_two_sample(&ed(&[1.0, 2.0]), &ed(&[1.0, 3.0])), 0.5);
        assert!(EmpiricalDistribution::new(Vec::<f64>::new()).is_err());
    }

    #[test]
    fn ks_vs_cdf_examples() {
        let uniform = |x: f64| x.clamp(0.0, 1.0);
        let n = 50;
        let q = ed(&(1..=n).map(|i| i as f64 / (n + 1) as f64).collect::<Vec<_>>());
        assert!(ks_vs_cdf(&q, uniform).unwrap() <= 1.0 / (n + 1) as f64 + 1e-12);
        assert!((ks_vs_cdf(&ed(&[0.5]), uniform).unwrap() - 0.5).abs() < 1e-12);
        let step = |x: f64| if x >= 2.0 { 1.0 } else { 0.0 };
        assert!(ks_vs_cdf(&ed(&[2.0; 7]), step).unwrap() <= 1.0 / 7.0);
        let bad = |x: f64| if x < 0.5 { 0.8 } else { 0.1 };
        assert!(ks_vs_cdf(&ed(&[0.2, 0.7]), bad).is_err());
    }

    #[test]
    fn ks_vs_own_ecdf_is_small() {
        let a = ed(&[0.3, 1.2, 1.2, 4.0, 5.5, 7.0]);
        let d = ks_vs_cdf(&a, |x| a.cdf(x)).unwrap();
        assert!(d <= 1.0 / 6.0 + 1e-12);
    }

    fn pareto_grid(n: usize, theta: f64, c: f64) -> Vec<f64> {
        (1..=n).map(|i| c * ((n + 1 - i) as f64 / (n + 1) as f64).powf(-1.0 / theta)).collect()
    }

    #[test]
    fn hill_on_deterministic_pareto_grid() {
        let h = hill_estimator(&ed(&pareto_grid(10_000, 1.5, 1.0)), 1000).unwrap();
        assert!(h.theta > 1.4 && h.theta < 1.6, "{h:?}");
        assert!(h.ci_lo < 1.5 && h.ci_hi > 1.5);
        for k in [100, 300, 2000] {
            let h = hill_estimator(&ed(&pareto_grid(10_000, 2.5, 1.0)), k).unwrap();
            assert!(h.ci_lo <= 2.5 && 2.5 <= h.ci_hi, "k={k} {h:?}");
        }
    }

    #[test]
    fn hill_errors() {
        assert!(hill_estimator(&ed(&[3.0; 100]), 20).is_err());
        assert!(hill_estimator(&ed(&[1.0; 100]), 5).is_err());
        assert!(hill_estimator(&ed(&[1.0; 20]), 20).is_err());
        let mut xs = pareto_grid(100, 1.5, 1.0);
        xs.iter_mut().for_each(|x| *x -= 50.0);
        assert!(hill_estimator(&ed(&xs), 90).is_err());
        assert_eq!(default_hill_k(10_000), 251);
    }

    #[test]
    fn slope_fit_examples() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|s| 3.0 - 2.0 * s).collect();
        let fit = slope_fit(&t, &v, (0.0, 10.0)).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12 && fit.stderr < 1e-10);
        let c = slope_fit(&t, &vec![4.0; 50], (0.0, 10.0)).unwrap();
        assert!(c.slope.abs() < 1e-12);
        assert!(slope_fit(&[1.0; 20], &[0.0; 20], (0.0, 2.0)).is_err());
        assert!(slope_fit(&t[..5], &v[..5], (0.0, 10.0)).is_err());
    }

    #[test]
    fn slope_fit_noise_within_ols_bound() {
        // OLS slope sd = amp / sqrt(Sxx); with 100 points on [0,1], Sxx ≈ 8.4 so sd ≈ 0.0035 * amp/0.01
        let mut rng = RngStream::new(5, 0);
        let t: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let sxx: f64 = t.iter().map(|s| (s - 0.5).powi(2)).sum();
        let sd = 0.01 / sxx.sqrt();
        assert!(3.0 * sd < 0.011);
        let v: Vec<f64> = t.iter().map(|s| 1.0 + 0.7 * s + 0.01 * (2.0 * rng.open01() - 1.0) * 3f64.sqrt()).collect();
        let fit = slope_fit(&t, &v, (0.0, 1.0)).unwrap();
        assert!((fit.slope - 0.7).abs() <= 0.01, "{fit:?}");
    }

    #[test]
    fn bootstrap_examples() {
        let mut rng = RngStream::new(1, 0);
        let (lo, hi) = bootstrap_ci(mean, &[2.5; 40], 200, &mut rng).unwrap();
        assert_eq!((lo, hi), (2.5, 2.5));
        assert!(bootstrap_ci(mean, &[1.0, 2.0], 50, &mut rng).is_err());

        let narrow: Vec<f64> = (0..200).map(|i| (i % 10) as f64).collect();
        let wide: Vec<f64> = narrow.iter().map(|x| 4.0 * x).collect();
        let a = bootstrap_ci(mean, &narrow, 500, &mut RngStream::new(2, 0)).unwrap();
        let b = bootstrap_ci(mean, &wide, 500, &mut RngStream::new(2, 0)).unwrap();
        assert!(b.1 - b.0 > a.1 - a.0);

        // determinism
        let c = bootstrap_ci(mean, &narrow, 500, &mut RngStream::new(2, 0)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn bootstrap_contains_point_estimate() {
        let mut misses = 0;
        for run in 0..100u64 {
            let mut g = RngStream::new(77, run);
            let data: Vec<f64> = (0..60).map(|_| -g.open01().ln()).collect();
            let (lo, hi) = bootstrap_ci(mean, &data, 200, &mut g).unwrap();
            let m = mean(&data);
            if !(lo <= m && m <= hi) {
                misses += 1;
            }
        }
        assert_eq!(misses, 0);
    }

    #[test]
    fn wilson_and_correlation() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5 && (hi - lo - 0.19).abs() < 0.01);
        assert_eq!(wilson_interval(10, 10).1, 1.0);
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((correlation(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(correlation(&x, &[1.0; 4]).is_err());
    }

    proptest! {
        #[test]
        fn ks_symmetric_and_triangle(
            a in prop::collection::vec(-5.0f64..5.0, 1..40),
            b in prop::collection::vec(-5.0f64..5.0, 1..40),
            c in prop::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let (ea, eb, ec) = (ed(&a), ed(&b), ed(&c));
            let ab = ks_two_sample(&ea, &eb);
            prop_assert_eq!(ab, ks_two_sample(&eb, &ea));
            prop_assert!((ab - ks_brute(&a, &b)).abs() < 1e-12);
            prop_assert!(ab <= ks_two_sample(&ea, &ec) + ks_two_sample(&ec, &eb) + 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn hill_is_scale_invariant(scale in 0.01f64..100.0, theta in 1.1f64..4.0) {
            let xs = pareto_grid(2000, theta, 1.0);
            let ys: Vec<f64> = xs.iter().map(|x| x * scale).collect();
            let a = hill_estimator(&ed(&xs), 200).unwrap();
            let b = hill_estimator(&ed(&ys), 200).unwrap();
            prop_assert!((a.theta - b.theta).abs() < 1e-9 * a.theta);
        }
    }
}
