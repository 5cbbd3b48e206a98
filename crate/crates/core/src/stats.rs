//! Estimates with standard errors and the handful of goodness-of-fit tools the
//! identity checks need.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::rng::SeedRecord;

/// Running mean and variance (Welford), mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan's parallel update. The result depends on merge order, so callers
    /// merge chunk results in chunk order.
    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Unbiased sample variance; zero with fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self, seed: SeedRecord, kind: &str) -> EstimateWithCI {
        EstimateWithCI {
            value: self.mean(),
            stderr: self.stderr(),
            count: self.count,
            seed,
            estimator_kind: kind.to_string(),
        }
    }
}

/// Running means and co-moments of pairs `(x, y)`, for ratio-of-means
/// estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CoMoments {
    count: u64,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl CoMoments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        self.count += 1;
        let n = self.count as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    pub fn merge(&mut self, other: &CoMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        self.mean_x += dx * nb / n;
        self.mean_y += dy * nb / n;
        self.m2_x += other.m2_x + dx * dx * na * nb / n;
        self.m2_y += other.m2_y + dy * dy * na * nb / n;
        self.c_xy += other.c_xy + dx * dy * na * nb / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `mean(x) / mean(y)` with a delta-method standard error.
    pub fn ratio(&self, seed: SeedRecord, kind: &str) -> EstimateWithCI {
        let n = self.count as f64;
        let r = self.mean_x / self.mean_y;
        let stderr = if self.count < 2 {
            f64::NAN
        } else {
            let d = n - 1.0;
            let (vx, vy, cxy) = (self.m2_x / d, self.m2_y / d, self.c_xy / d);
            ((vx - 2.0 * r * cxy + r * r * vy).max(0.0) / n).sqrt() / self.mean_y.abs()
        };
        EstimateWithCI {
            value: r,
            stderr,
            count: self.count,
            seed,
            estimator_kind: kind.to_string(),
        }
    }
}

/// A point estimate with its standard error and provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub value: f64,
    pub stderr: f64,
    pub count: u64,
    pub seed: SeedRecord,
    pub estimator_kind: String,
}

impl EstimateWithCI {
    /// A value known without sampling error.
    pub fn exact(value: f64, seed: SeedRecord, kind: &str) -> Self {
        EstimateWithCI {
            value,
            stderr: 0.0,
            count: 1,
            seed,
            estimator_kind: kind.to_string(),
        }
    }

    pub fn ci95(&self) -> (f64, f64) {
        (
            self.value - 1.96 * self.stderr,
            self.value + 1.96 * self.stderr,
        )
    }

    /// `|value - target| <= k * stderr`.
    pub fn within_sigmas(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }

    /// Standard score against a target; zero when value equals target exactly.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = self.value - target;
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: &EstimateWithCI, k: f64) -> bool {
        let se = self.stderr.hypot(other.stderr);
        (self.value - other.value).abs() <= k * se
    }

    /// Whether the two 95% intervals intersect.
    pub fn ci95_overlaps(&self, other: &EstimateWithCI) -> bool {
        let (a_lo, a_hi) = self.ci95();
        let (b_lo, b_hi) = other.ci95();
        a_lo <= b_hi && b_lo <= a_hi
    }

    pub fn relative_stderr(&self) -> f64 {
        self.stderr / self.value.abs()
    }

    /// Scale value and error by a known constant.
    pub fn scaled(&self, factor: f64) -> EstimateWithCI {
        EstimateWithCI {
            value: self.value * factor,
            stderr: self.stderr * factor.abs(),
            ..self.clone()
        }
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// `C(2n, n) / 4^n`, the probability that a symmetric continuous walk stays
/// non-negative for `n` steps.
pub fn central_binomial_prob(n: u64) -> f64 {
    let mut p = 1.0;
    for k in 1..=n {
        p *= (2 * k - 1) as f64 / (2 * k) as f64;
    }
    p
}

/// Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: f64,
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
        n_effective: n,
    }
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xs[i].min(ys[j]);
        while i < n && xs[i] <= x {
            i += 1;
        }
        while j < m && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_eff = (n * m) as f64 / (n + m) as f64;
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n_eff),
        n_effective: n_eff,
    }
}

/// Pearson chi-square goodness of fit. Cells with expected count below 5 are
/// pooled into their right neighbour (the last group into its left one).
pub fn chi_square_gof(observed: &[f64], expected: &[f64]) -> (f64, f64) {
    assert_eq!(observed.len(), expected.len());
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => cells.push((o_acc, e_acc)),
        }
    }
    let stat: f64 = cells.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1);
    if dof == 0 {
        return (stat, 1.0);
    }
    let p = ChiSquared::new(dof as f64)
        .map(|d| 1.0 - d.cdf(stat))
        .unwrap_or(f64::NAN);
    (stat, p)
}

/// Weighted least squares fit of `y = intercept + slope * x`. Returns
/// `(intercept, slope, stderr(intercept))`; weights are `1 / se^2`.
pub fn weighted_affine_fit(x: &[f64], y: &[f64], se: &[f64]) -> (f64, f64, f64) {
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let w = if se[i] > 0.0 {
            1.0 / (se[i] * se[i])
        } else {
            1e12
        };
        sw += w;
        swx += w * x[i];
        swy += w * y[i];
        swxx += w * x[i] * x[i];
        swxy += w * x[i] * y[i];
    }
    let det = sw * swxx - swx * swx;
    if x.len() < 2 || det.abs() < f64::EPSILON * sw * swxx {
        let mean = swy / sw;
        return (mean, 0.0, (1.0 / sw).sqrt());
    }
    let slope = (sw * swxy - swx * swy) / det;
    let intercept = (swxx * swy - swx * swxy) / det;
    (intercept, slope, (swxx / det).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_of_proportional_pairs_is_exact() {
        let mut c = CoMoments::new();
        let mut d = CoMoments::new();
        for i in 0..100 {
            let y = 1.0 + (i % 7) as f64;
            if i < 40 {
                c.push(3.0 * y, y)
            } else {
                d.push(3.0 * y, y)
            }
        }
        c.merge(&d);
        let r = c.ratio(SeedRecord::new(0), "t");
        assert!((r.value - 3.0).abs() < 1e-12);
        assert!(r.stderr < 1e-9);
    }
    use proptest::prelude::*;

    #[test]
    fn central_binomial_matches_closed_form() {
        // C(20,10) / 4^10 = 184756 / 1048576
        assert!((central_binomial_prob(10) - 184756.0 / 1048576.0).abs() < 1e-15);
        assert_eq!(central_binomial_prob(0), 1.0);
        // sqrt(n) * p_n -> 1/sqrt(pi)
        let n = 1_000_000u64;
        let lim = central_binomial_prob(n) * (n as f64).sqrt();
        assert!((lim - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-14);
        let v = normal_cdf(1.959963984540054);
        assert!((v - 0.975).abs() < 1e-10, "{v:e}");
        assert!((normal_cdf(-2.0) - 0.022750131948179195).abs() < 1e-10);
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // Classical critical values: P(K > 1.358) = 0.05, P(K > 1.628) = 0.01.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 2e-4);
    }

    #[test]
    fn ks_detects_shift_and_accepts_match() {
        let n = 2000;
        let uniform: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let ok = ks_one_sample(&uniform, |x| x.clamp(0.0, 1.0));
        assert!(ok.p_value > 0.99);
        let shifted: Vec<f64> = uniform.iter().map(|u| u * 0.9).collect();
        let bad = ks_one_sample(&shifted, |x| x.clamp(0.0, 1.0));
        assert!(bad.p_value < 1e-6);
        let two = ks_two_sample(&uniform, &shifted);
        assert!((two.statistic - bad.statistic).abs() < 2e-3);
    }

    #[test]
    fn chi_square_pools_small_cells() {
        let (stat, p) = chi_square_gof(&[50.0, 50.0, 1.0], &[50.0, 50.0, 1.0]);
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_fit_recovers_line() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 2.0 * v).collect();
        let (a, b, _) = weighted_affine_fit(&x, &y, &[0.01, 0.01, 0.01]);
        assert!((a - 0.5).abs() < 1e-12 && (b - 2.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn merge_equals_sequential(xs in proptest::collection::vec(-1e3f64..1e3, 1..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let mut all = Moments::new();
            xs.iter().for_each(|&x| all.push(x));
            let (mut a, mut b) = (Moments::new(), Moments::new());
            xs[..split].iter().for_each(|&x| a.push(x));
            xs[split..].iter().for_each(|&x| b.push(x));
            a.merge(&b);
            prop_assert_eq!(a.count(), all.count());
            prop_assert!((a.mean() - all.mean()).abs() <= 1e-9 * (1.0 + all.mean().abs()));
            prop_assert!((a.variance() - all.variance()).abs() <= 1e-7 * (1.0 + all.variance()));
        }
    }
}
