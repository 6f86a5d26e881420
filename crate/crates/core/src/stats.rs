//! Numerical primitives shared by every analysis in the crate.
//!
//! Everything here is a pure function of its arguments: normal quantiles,
//! the closed-form decisive-judgment budget and its inverse (power), the
//! Bernoulli KL divergence against the indifferent null, the exact two-sided
//! binomial test, the likelihood-ratio test thresholded at half the KL
//! budget, and the same-budget detectability statistic.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// Significance level and target power of a two-sided test of `p = 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    alpha: f64,
    power: f64,
}

impl TestConfig {
    pub fn new(alpha: f64, power: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
        }
        if !(power > 0.0 && power < 1.0) {
            return Err(Error::Domain(format!("power must lie in (0,1), got {power}")));
        }
        Ok(Self { alpha, power })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// `z_{1-alpha/2}`, the two-sided critical value.
    pub fn z_alpha(&self) -> f64 {
        normal_quantile(1.0 - self.alpha / 2.0).expect("alpha validated")
    }

    /// `z_{power}`.
    pub fn z_power(&self) -> f64 {
        normal_quantile(self.power).expect("power validated")
    }
}

impl Default for TestConfig {
    /// alpha = 0.05, power = 0.9.
    fn default() -> Self {
        Self { alpha: 0.05, power: 0.9 }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// Acklam's rational approximation to the inverse normal CDF
// (relative error below 1.2e-9 before refinement).
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

/// Inverse standard normal CDF.
///
/// Acklam's piecewise rational approximation followed by one Newton step
/// against the erfc-based CDF; absolute error is below 1e-8 on (0,1).
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0,1), got {q}")));
    }
    if q == 0.5 {
        return Ok(0.0);
    }
    const P_LOW: f64 = 0.02425;
    let (a, b, c, d) = (&ACKLAM_A, &ACKLAM_B, &ACKLAM_C, &ACKLAM_D);
    let x = if q < P_LOW {
        let t = (-2.0 * q.ln()).sqrt();
        (((((c[0] * t + c[1]) * t + c[2]) * t + c[3]) * t + c[4]) * t + c[5])
            / ((((d[0] * t + d[1]) * t + d[2]) * t + d[3]) * t + 1.0)
    } else if q <= 1.0 - P_LOW {
        let s = q - 0.5;
        let r = s * s;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * s
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        let t = (-2.0 * (1.0 - q).ln()).sqrt();
        -(((((c[0] * t + c[1]) * t + c[2]) * t + c[3]) * t + c[4]) * t + c[5])
            / ((((d[0] * t + d[1]) * t + d[2]) * t + d[3]) * t + 1.0)
    };
    let pdf = normal_pdf(x);
    if pdf > 0.0 {
        Ok(x - (normal_cdf(x) - q) / pdf)
    } else {
        Ok(x)
    }
}

/// `(z_{1-alpha/2} + z_{power})^2 / 4`: the budget for margin `delta` is
/// this constant divided by `delta^2`.
pub fn budget_constant(cfg: &TestConfig) -> f64 {
    let z = cfg.z_alpha() + cfg.z_power();
    z * z / 4.0
}

fn check_margin(delta: f64) -> Result<()> {
    if !delta.is_finite() || delta.abs() >= 0.5 {
        return Err(Error::Domain(format!("margin must satisfy |delta| < 0.5, got {delta}")));
    }
    Ok(())
}

/// Unrounded closed-form budget `(z_{1-alpha/2} + z_{power})^2 / (4 delta^2)`.
pub fn closed_form_budget(delta: f64, cfg: &TestConfig) -> Result<f64> {
    check_margin(delta)?;
    if delta == 0.0 {
        return Err(Error::Infeasible(
            "a zero margin requires an infinite budget".into(),
        ));
    }
    Ok(budget_constant(cfg) / (delta * delta))
}

/// Decisive judgments needed to detect `delta` at the configured level and
/// power, rounded up.
pub fn required_sample_size(delta: f64, cfg: &TestConfig) -> Result<u64> {
    Ok(closed_form_budget(delta, cfg)?.ceil() as u64)
}

/// Normal-approximation power of the two-sided test at `n` decisive
/// judgments: `Phi(2|delta|sqrt(n) - z) + Phi(-2|delta|sqrt(n) - z)`.
///
/// The second term is the opposite-tail rejection; it makes the null case
/// return exactly `alpha` and is negligible otherwise.
pub fn closed_form_power(delta: f64, n: u64, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    if !delta.is_finite() || delta.abs() > 0.5 {
        return Err(Error::Domain(format!("margin must satisfy |delta| <= 0.5, got {delta}")));
    }
    let z = TestConfig::new(alpha, 0.5)?.z_alpha();
    let shift = 2.0 * delta.abs() * (n as f64).sqrt();
    Ok((normal_cdf(shift - z) + normal_cdf(-shift - z)).clamp(0.0, 1.0))
}

/// `KL(Bern(1/2 + delta) || Bern(1/2))` in nats.
pub fn bernoulli_kl(delta: f64) -> Result<f64> {
    check_margin(delta)?;
    let p = 0.5 + delta;
    let q = 0.5 - delta;
    Ok(p * (2.0 * delta).ln_1p() + q * (-2.0 * delta).ln_1p())
}

/// Accumulated KL divergence of a judgment stream against the null, with
/// the quadratic sandwich `2 sum delta^2 <= K <= (9/4) sum delta^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlBudgetSummary {
    pub total_kl: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub count: usize,
    /// `sum delta_t^2`, i.e. `B * mu_2` for the realized stream.
    pub b_mu2: f64,
    /// True when every `|delta_t| <= 1/4`, so the bounds are guaranteed.
    pub bounds_apply: bool,
}

pub fn kl_budget(deltas: &[f64]) -> Result<KlBudgetSummary> {
    let mut total = 0.0;
    let mut sum_sq = 0.0;
    let mut bounds_apply = true;
    for &d in deltas {
        total += bernoulli_kl(d)?;
        sum_sq += d * d;
        bounds_apply &= d.abs() <= 0.25;
    }
    Ok(KlBudgetSummary {
        total_kl: total,
        lower_bound: 2.0 * sum_sq,
        upper_bound: 2.25 * sum_sq,
        count: deltas.len(),
        b_mu2: sum_sq,
        bounds_apply,
    })
}

/// Exact binomial tail probabilities for a fixed `(n, p0)`.
///
/// `lower[k] = P(X <= k)` is accumulated left to right and
/// `upper[k] = P(X >= k)` right to left, so the p-value of every `k` is
/// computed by the same arithmetic whether it is queried directly or
/// through a precomputed rejection region.
struct TailTable {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TailTable {
    fn new(n: u64, p0: f64) -> Self {
        let len = n as usize + 1;
        let (lp, lq) = (p0.ln(), (1.0 - p0).ln());
        let pmf: Vec<f64> = (0..=n)
            .map(|k| (ln_binomial(n, k) + k as f64 * lp + (n - k) as f64 * lq).exp())
            .collect();
        let mut lower = vec![0.0; len];
        let mut acc = 0.0;
        for k in 0..len {
            acc += pmf[k];
            lower[k] = acc;
        }
        let mut upper = vec![0.0; len];
        acc = 0.0;
        for k in (0..len).rev() {
            acc += pmf[k];
            upper[k] = acc;
        }
        Self { lower, upper }
    }

    fn p_value(&self, k: usize) -> f64 {
        (2.0 * self.lower[k].min(self.upper[k])).min(1.0)
    }
}

fn check_binomial_args(n: u64, p0: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::Domain(format!("p0 must lie in (0,1), got {p0}")));
    }
    Ok(())
}

/// Two-sided exact binomial p-value: twice the smaller exact tail, capped
/// at 1.
pub fn exact_binomial_test(successes: u64, n: u64, p0: f64) -> Result<f64> {
    check_binomial_args(n, p0)?;
    if successes > n {
        return Err(Error::Domain(format!("successes {successes} exceed n {n}")));
    }
    Ok(TailTable::new(n, p0).p_value(successes as usize))
}

/// Precomputed acceptance/rejection decisions of [`exact_binomial_test`]
/// at a fixed `n` and level; used by Monte-Carlo loops that test the same
/// `n` thousands of times.
#[derive(Debug, Clone)]
pub struct RejectionRegion {
    n: u64,
    reject: Vec<bool>,
}

impl RejectionRegion {
    /// Region `{k : p-value(k) < alpha}`.
    pub fn exact(n: u64, p0: f64, alpha: f64) -> Result<Self> {
        check_binomial_args(n, p0)?;
        let table = TailTable::new(n, p0);
        let reject = (0..=n as usize).map(|k| table.p_value(k) < alpha).collect();
        Ok(Self { n, reject })
    }

    /// Normal-approximation region `|k/n - 1/2| / sqrt(1/(4n)) > z_{1-alpha/2}`.
    pub fn normal(n: u64, alpha: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("n must be at least 1".into()));
        }
        let z = TestConfig::new(alpha, 0.5)?.z_alpha();
        let nf = n as f64;
        let reject = (0..=n)
            .map(|k| ((k as f64 / nf) - 0.5).abs() * (4.0 * nf).sqrt() > z)
            .collect();
        Ok(Self { n, reject })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn rejects(&self, successes: u64) -> bool {
        self.reject[successes as usize]
    }

    /// Probability of rejection when `X ~ Binomial(n, p)`.
    pub fn power_at(&self, p: f64) -> f64 {
        let (lp, lq) = (p.ln(), (1.0 - p).ln());
        (0..=self.n)
            .filter(|&k| self.reject[k as usize])
            .map(|k| (ln_binomial(self.n, k) + k as f64 * lp + (self.n - k) as f64 * lq).exp())
            .sum()
    }
}

/// Result of the likelihood-ratio test thresholded at half the KL budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlrOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
}

/// `L = sum_t [y_t ln(2 p_t) + (1 - y_t) ln(2 (1 - p_t))]` with
/// `p_t = 1/2 + delta_t`; rejects the null iff `L >= K / 2`.
pub fn llr_test(outcomes: &[bool], deltas: &[f64], kl_target: f64) -> Result<LlrOutcome> {
    if outcomes.len() != deltas.len() {
        return Err(Error::Usage(format!(
            "{} outcomes but {} margins",
            outcomes.len(),
            deltas.len()
        )));
    }
    if !(kl_target >= 0.0) {
        return Err(Error::Domain(format!("KL target must be >= 0, got {kl_target}")));
    }
    let mut stat = 0.0;
    for (&y, &d) in outcomes.iter().zip(deltas) {
        if !(d.abs() <= 0.25) {
            return Err(Error::Domain(format!("per-judgment margin {d} exceeds 1/4")));
        }
        stat += if y { (2.0 * d).ln_1p() } else { (-2.0 * d).ln_1p() };
    }
    let threshold = kl_target / 2.0;
    Ok(LlrOutcome { statistic: stat, threshold, reject: stat >= threshold })
}

/// `exp(-K) / 2`: no test can push worst-case total error below this at KL
/// budget `K`.
pub fn minimax_error_floor(kl: f64) -> Result<f64> {
    if !(kl >= 0.0) {
        return Err(Error::Domain(format!("KL budget must be >= 0, got {kl}")));
    }
    Ok(0.5 * (-kl).exp())
}

/// `|p - 1/2| / sqrt(p (1 - p) / n)`.
///
/// A degenerate aggregate (`p` of exactly 0 or 1) has zero estimated
/// variance; the statistic is then `f64::INFINITY`, which callers treat as
/// a sentinel to exclude and count.
pub fn detectability_z(p_hat: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::Domain(format!("p_hat must lie in [0,1], got {p_hat}")));
    }
    if p_hat == 0.0 || p_hat == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok((p_hat - 0.5).abs() / (p_hat * (1.0 - p_hat) / n as f64).sqrt())
}

/// Linear-interpolation sample quantile (`h = (n - 1) q`) of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    // Bisection on an independent CDF implementation.
    fn quantile_oracle(q: f64) -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if n.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-4);
        assert!((normal_quantile(0.9).unwrap() - 1.281552).abs() < 1e-4);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_matches_bisection_oracle() {
        for i in 1..1000 {
            let q = i as f64 / 1000.0;
            let got = normal_quantile(q).unwrap();
            assert!((got - quantile_oracle(q)).abs() < 1e-8, "q={q}");
        }
        for q in [1e-10, 1e-6, 0.001, 0.02, 0.0243, 0.0245, 0.999, 1.0 - 1e-6] {
            assert!((normal_quantile(q).unwrap() - quantile_oracle(q)).abs() < 1e-8, "q={q}");
        }
    }

    #[test]
    fn budget_examples() {
        let cfg = TestConfig::default();
        assert_eq!(required_sample_size(0.05, &cfg).unwrap(), 1051);
        assert_eq!(required_sample_size(0.190, &cfg).unwrap(), 73);
        // Paper rounds the constant to 2.63 and reports 731; the exact constant gives 730.
        let n = required_sample_size(0.06, &cfg).unwrap() as i64;
        assert!((n - 731).abs() <= 2);
        assert_eq!(required_sample_size(0.5 - 1e-9, &cfg).unwrap(), 11);
        assert!(matches!(required_sample_size(0.0, &cfg), Err(Error::Infeasible(_))));
        assert!(matches!(required_sample_size(0.5, &cfg), Err(Error::Domain(_))));
        assert_eq!(required_sample_size(-0.05, &cfg).unwrap(), 1051);
    }

    #[test]
    fn budget_constant_rounds_to_eq9_value() {
        let c = budget_constant(&TestConfig::default());
        assert!((c - 2.6269).abs() < 5e-5, "{c}");
        assert_eq!(format!("{c:.2}"), "2.63");
    }

    #[test]
    fn budget_monotone_in_config() {
        let base = required_sample_size(0.1, &TestConfig::new(0.05, 0.9).unwrap()).unwrap();
        let stricter = required_sample_size(0.1, &TestConfig::new(0.01, 0.9).unwrap()).unwrap();
        let stronger = required_sample_size(0.1, &TestConfig::new(0.05, 0.95).unwrap()).unwrap();
        assert!(stricter > base);
        assert!(stronger > base);
    }

    #[test]
    fn test_config_validation() {
        assert!(TestConfig::new(0.0, 0.9).is_err());
        assert!(TestConfig::new(0.05, 1.0).is_err());
        assert!(TestConfig::new(1.2, 0.9).is_err());
    }

    #[test]
    fn power_examples() {
        let p = closed_form_power(0.05, 1051, 0.05).unwrap();
        assert!((p - 0.90).abs() < 0.01, "{p}");
        assert!((closed_form_power(0.0, 17, 0.05).unwrap() - 0.05).abs() < 1e-12);
        assert!((closed_form_power(0.0, 1000, 0.01).unwrap() - 0.01).abs() < 1e-12);
        assert!(closed_form_power(0.1, 0, 0.05).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(bernoulli_kl(0.0).unwrap(), 0.0);
        let k = bernoulli_kl(0.25).unwrap();
        assert!((k - 0.130812).abs() < 1e-6);
        assert!((0.125..=0.140625).contains(&k));
        let k = bernoulli_kl(0.1).unwrap();
        assert!((k - 0.020136).abs() < 1e-6);
        assert!((0.02..=0.0225).contains(&k));
        assert!(bernoulli_kl(0.5).is_err());
        assert!(bernoulli_kl(-0.7).is_err());
    }

    #[test]
    fn kl_budget_examples() {
        let empty = kl_budget(&[]).unwrap();
        assert_eq!(empty.total_kl, 0.0);
        assert_eq!(empty.count, 0);
        assert!((kl_budget(&[0.25; 4]).unwrap().total_kl - 0.523248).abs() < 1e-6);
        let mixed = kl_budget(&[0.0, 0.1, 0.25]).unwrap();
        assert!((mixed.total_kl - 0.150948).abs() < 1e-6);
        assert!(mixed.lower_bound <= mixed.total_kl && mixed.total_kl <= mixed.upper_bound);
        assert!(mixed.bounds_apply);
        assert!(!kl_budget(&[0.3]).unwrap().bounds_apply);
    }

    // Exact tails by direct enumeration with rational-ish arithmetic.
    fn binom_oracle(k: u64, n: u64) -> f64 {
        let mut coef = vec![1.0_f64; (n + 1) as usize];
        for i in 1..=n as usize {
            for j in (1..i).rev() {
                coef[j] += coef[j - 1];
            }
        }
        let scale = 0.5_f64.powi(n as i32);
        let lower: f64 = coef[..=k as usize].iter().sum::<f64>() * scale;
        let upper: f64 = coef[k as usize..].iter().sum::<f64>() * scale;
        (2.0 * lower.min(upper)).min(1.0)
    }

    #[test]
    fn binomial_examples() {
        assert!((exact_binomial_test(10, 10, 0.5).unwrap() - 0.001953125).abs() < 1e-9);
        assert_eq!(exact_binomial_test(5, 10, 0.5).unwrap(), 1.0);
        let p = exact_binomial_test(60, 100, 0.5).unwrap();
        assert!((p - binom_oracle(60, 100)).abs() < 1e-12);
        assert!((p - 0.0569).abs() < 1e-4);
        assert!(exact_binomial_test(11, 10, 0.5).is_err());
        assert!(exact_binomial_test(0, 0, 0.5).is_err());
    }

    #[test]
    fn binomial_matches_enumeration() {
        for n in [1, 2, 7, 20, 51] {
            for k in 0..=n {
                let got = exact_binomial_test(k, n, 0.5).unwrap();
                assert!((got - binom_oracle(k, n)).abs() < 1e-12, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn rejection_region_agrees_with_direct_test() {
        for n in [1, 10, 66, 263, 1051] {
            let region = RejectionRegion::exact(n, 0.5, 0.05).unwrap();
            for k in 0..=n {
                let direct = exact_binomial_test(k, n, 0.5).unwrap() < 0.05;
                assert_eq!(region.rejects(k), direct, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn exact_power_at_required_n() {
        for d in [0.05, 0.1, 0.2] {
            let n = required_sample_size(d, &TestConfig::default()).unwrap();
            let region = RejectionRegion::exact(n, 0.5, 0.05).unwrap();
            let pw = region.power_at(0.5 + d);
            assert!((0.88..0.92).contains(&pw), "delta={d} power={pw}");
            assert!(region.power_at(0.5) <= 0.05);
        }
    }

    #[test]
    fn llr_examples() {
        let out = llr_test(&[true, false, true], &[0.0; 3], 1.0).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!(!out.reject);
        let out = llr_test(&[true], &[0.25], 1.0).unwrap();
        assert!((out.statistic - 1.5_f64.ln()).abs() < 1e-12);
        assert!((out.statistic - 0.405465).abs() < 1e-6);
        assert!(matches!(llr_test(&[true], &[0.1, 0.1], 1.0), Err(Error::Usage(_))));
        assert!(llr_test(&[true], &[0.3], 1.0).is_err());
    }

    #[test]
    fn error_floor_examples() {
        assert_eq!(minimax_error_floor(0.0).unwrap(), 0.5);
        assert!((minimax_error_floor(2.0_f64.ln()).unwrap() - 0.25).abs() < 1e-15);
        let budget = kl_budget(&vec![0.05; 1051]).unwrap();
        assert!(minimax_error_floor(budget.total_kl).unwrap() < 0.005);
        assert!(minimax_error_floor(-1.0).is_err());
    }

    #[test]
    fn z_examples() {
        assert_eq!(detectability_z(0.5, 77).unwrap(), 0.0);
        assert!((detectability_z(0.6, 100).unwrap() - 2.0412).abs() < 1e-4);
        // 0.06 / sqrt(0.56 * 0.44 / 50)
        assert!((detectability_z(0.56, 50).unwrap() - 0.854704).abs() < 1e-6);
        assert_eq!(detectability_z(1.0, 10).unwrap(), f64::INFINITY);
        assert_eq!(detectability_z(0.0, 10).unwrap(), f64::INFINITY);
        assert!(detectability_z(0.5, 0).is_err());
    }

    #[test]
    fn quantile_interpolation() {
        assert_eq!(quantile_sorted(&[0.1, 0.2, 0.3], 0.5), 0.2);
        assert!((quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.25) - 1.75).abs() < 1e-15);
        assert_eq!(quantile_sorted(&[4.0], 0.9), 4.0);
    }

    proptest! {
        #[test]
        fn kl_even_and_increasing(d in 0.0f64..0.49, e in 0.0f64..0.49) {
            prop_assert_eq!(bernoulli_kl(d).unwrap(), bernoulli_kl(-d).unwrap());
            if d < e {
                prop_assert!(bernoulli_kl(d).unwrap() < bernoulli_kl(e).unwrap());
            }
        }

        #[test]
        fn budget_quadratic_scaling(d in 0.005f64..0.1) {
            let cfg = TestConfig::default();
            let n = required_sample_size(d, &cfg).unwrap() as f64;
            let n_half = required_sample_size(d / 2.0, &cfg).unwrap() as f64;
            let ratio = n_half / n;
            prop_assert!((3.9..=4.1).contains(&ratio), "ratio {}", ratio);
        }

        #[test]
        fn budget_nonincreasing_in_margin(a in 0.001f64..0.49, b in 0.001f64..0.49) {
            let cfg = TestConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(required_sample_size(hi, &cfg).unwrap() <= required_sample_size(lo, &cfg).unwrap());
        }

        #[test]
        fn binomial_symmetry(n in 1u64..400, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).round() as u64;
            let a = exact_binomial_test(k, n, 0.5).unwrap();
            let b = exact_binomial_test(n - k, n, 0.5).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a > 0.0 && a <= 1.0);
        }
    }
}
