//! Distributional analytics over per-pair margins.
//!
//! Quantiles use linear interpolation between order statistics
//! (`h = (n - 1) q`). The near-tie subset is inclusive: `|delta| <= tau`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{pair_margins, Dataset, MarginEstimate, PairKey, TiePolicy};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{exact_binomial_test, quantile_sorted, required_sample_size, TestConfig};
use rand::Rng;

fn implied_budget(delta: f64, alpha: f64) -> Option<u64> {
    let cfg = TestConfig::new(alpha, 0.9).ok()?;
    required_sample_size(delta, &cfg).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub level: f64,
    pub abs_delta: f64,
    /// Decisive judgments for 90% power at alpha = 0.05; `None` when the
    /// quantile is zero (unbounded budget).
    pub n_alpha_05: Option<u64>,
    pub n_alpha_01: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileReport {
    pub pairs: usize,
    pub rows: Vec<QuantileRow>,
}

/// Quantiles of `|delta_hat|` with the budgets they imply.
pub fn tail_quantiles(margins: &[MarginEstimate], levels: &[f64]) -> Result<QuantileReport> {
    if margins.is_empty() {
        return Err(Error::Usage("no margins to summarize".into()));
    }
    let abs: Vec<f64> = margins.iter().map(|m| m.delta_hat.abs()).collect();
    quantiles_of(&abs, levels)
}

/// [`tail_quantiles`] over raw absolute margins.
pub fn quantiles_of(abs_margins: &[f64], levels: &[f64]) -> Result<QuantileReport> {
    if abs_margins.is_empty() {
        return Err(Error::Usage("no margins to summarize".into()));
    }
    if let Some(l) = levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Domain(format!("quantile level {l} outside [0,1]")));
    }
    let mut sorted = abs_margins.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut levels = levels.to_vec();
    levels.sort_by(f64::total_cmp);
    let rows = levels
        .into_iter()
        .map(|level| {
            let v = quantile_sorted(&sorted, level);
            QuantileRow {
                level,
                abs_delta: v,
                n_alpha_05: implied_budget(v, 0.05),
                n_alpha_01: implied_budget(v, 0.01),
            }
        })
        .collect();
    Ok(QuantileReport { pairs: sorted.len(), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearTieReport {
    pub tau: f64,
    pub count: usize,
    /// Share of the analyzed (well-sampled) pairs in the subset.
    pub proportion: f64,
    pub median_abs_delta: Option<f64>,
    /// Budget for 90% power at alpha = 0.05 implied by the subset median.
    pub implied_n: Option<u64>,
    pub pairs: Vec<PairKey>,
}

pub fn near_tie_filter(margins: &[MarginEstimate], tau: f64) -> Result<NearTieReport> {
    if margins.is_empty() {
        return Err(Error::Usage("no margins to filter".into()));
    }
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::Domain(format!("tau must lie in (0, 0.5), got {tau}")));
    }
    let subset: Vec<&MarginEstimate> = margins.iter().filter(|m| m.delta_hat.abs() <= tau).collect();
    let mut abs: Vec<f64> = subset.iter().map(|m| m.delta_hat.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let median = (!abs.is_empty()).then(|| quantile_sorted(&abs, 0.5));
    Ok(NearTieReport {
        tau,
        count: subset.len(),
        proportion: subset.len() as f64 / margins.len() as f64,
        median_abs_delta: median,
        implied_n: median.and_then(|m| implied_budget(m, 0.05)),
        pairs: subset.iter().map(|m| m.pair.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub quantile: f64,
    pub point: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub replicates: usize,
    pub seed: u64,
}

/// Percentile-method CI for a quantile of `|delta|`, resampling pairs with
/// replacement. Replicate `r` draws from its own stream `(seed, r)`.
pub fn bootstrap_quantile_ci(
    abs_margins: &[f64],
    quantile: f64,
    replicates: usize,
    ci: f64,
    seed: u64,
) -> Result<BootstrapCi> {
    if abs_margins.len() < 2 {
        return Err(Error::Usage("bootstrap needs at least two margins".into()));
    }
    if replicates == 0 {
        return Err(Error::Usage("replicates must be positive".into()));
    }
    if !(ci > 0.0 && ci < 1.0) || !(0.0..=1.0).contains(&quantile) {
        return Err(Error::Domain("ci must lie in (0,1) and quantile in [0,1]".into()));
    }
    let mut sorted = abs_margins.to_vec();
    sorted.sort_by(f64::total_cmp);
    let point = quantile_sorted(&sorted, quantile);
    let n = abs_margins.len();
    let mut stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, &[r as u64]);
            let mut sample: Vec<f64> = (0..n).map(|_| abs_margins[g.random_range(0..n)]).collect();
            sample.sort_by(f64::total_cmp);
            quantile_sorted(&sample, quantile)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - ci) / 2.0;
    Ok(BootstrapCi {
        quantile,
        point,
        level: ci,
        lower: quantile_sorted(&stats, tail),
        upper: quantile_sorted(&stats, 1.0 - tail),
        replicates,
        seed,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Usage("correlation inputs differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::Undefined("correlation needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant vector".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Usage("spearman inputs differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::Usage("spearman needs at least two points".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieRateRow {
    pub pair: PairKey,
    pub tie_rate: f64,
    pub abs_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieRateStats {
    pub rows: Vec<TieRateRow>,
    /// Pearson correlation of tie rate with decisive-only `|delta|`.
    pub correlation: f64,
    pub median_tie_rate: f64,
}

pub fn tie_rate_stats(dataset: &Dataset, min_decisive: u64) -> Result<TieRateStats> {
    let rows: Vec<TieRateRow> = dataset
        .aggregates()
        .into_values()
        .filter(|a| a.decisive() >= min_decisive.max(1))
        .map(|a| TieRateRow {
            tie_rate: a.ties as f64 / a.total() as f64,
            abs_delta: (a.wins_second as f64 / a.decisive() as f64 - 0.5).abs(),
            pair: a.pair,
        })
        .collect();
    if rows.len() < 2 {
        return Err(Error::Undefined(format!(
            "tie-rate correlation needs at least two qualifying pairs, found {}",
            rows.len()
        )));
    }
    let rates: Vec<f64> = rows.iter().map(|r| r.tie_rate).collect();
    let deltas: Vec<f64> = rows.iter().map(|r| r.abs_delta).collect();
    let correlation = pearson(&rates, &deltas)?;
    let mut sorted = rates;
    sorted.sort_by(f64::total_cmp);
    Ok(TieRateStats { median_tie_rate: quantile_sorted(&sorted, 0.5), rows, correlation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub pair: PairKey,
    pub early_delta: f64,
    pub late_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub k: usize,
    pub rows: Vec<StabilityRow>,
    /// Pairs with fewer than `2k` decisive judgments.
    pub skipped: Vec<PairKey>,
    /// Spearman correlation of early against late `|delta|`.
    pub spearman: f64,
    /// Exact sign-test p-value for `|late| - |early|` over pairs with a
    /// nonzero difference; `None` when every difference is zero.
    pub drift_p_value: Option<f64>,
}

/// Margins from the first `k` and last `k` decisive judgments of each pair.
pub fn early_late_stability(dataset: &Dataset, k: usize) -> Result<StabilityReport> {
    if k == 0 {
        return Err(Error::Usage("k must be positive".into()));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for pair in dataset.aggregates().into_keys() {
        let stream = dataset.decisive_stream(&pair);
        if stream.len() < 2 * k {
            skipped.push(pair);
            continue;
        }
        let share = |s: &[bool]| s.iter().filter(|&&y| y).count() as f64 / k as f64 - 0.5;
        rows.push(StabilityRow {
            early_delta: share(&stream[..k]),
            late_delta: share(&stream[stream.len() - k..]),
            pair,
        });
    }
    let early: Vec<f64> = rows.iter().map(|r| r.early_delta.abs()).collect();
    let late: Vec<f64> = rows.iter().map(|r| r.late_delta.abs()).collect();
    let spearman = spearman_rho(&early, &late)?;
    let ups = rows.iter().filter(|r| r.late_delta.abs() > r.early_delta.abs()).count() as u64;
    let downs = rows.iter().filter(|r| r.late_delta.abs() < r.early_delta.abs()).count() as u64;
    let drift_p_value = if ups + downs > 0 { Some(exact_binomial_test(ups, ups + downs, 0.5)?) } else { None };
    Ok(StabilityReport { k, rows, skipped, spearman, drift_p_value })
}

/// Writes `pair,p_hat,delta_hat,abs_delta,n_decisive,n_effective,tie_policy`
/// rows for external plotting.
pub fn write_margins_csv<W: Write>(margins: &[MarginEstimate], mut out: W) -> Result<()> {
    writeln!(out, "pair,p_hat,delta_hat,abs_delta,n_decisive,n_effective,tie_policy")?;
    for m in margins {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{},{:.6},{}",
            m.pair,
            m.p_hat,
            m.delta_hat,
            m.delta_hat.abs(),
            m.n_decisive,
            m.n_effective,
            m.tie_policy
        )?;
    }
    Ok(())
}

/// Margins of well-sampled pairs; errors when none qualify.
pub fn qualifying_margins(dataset: &Dataset, policy: TiePolicy, min_decisive: u64) -> Result<Vec<MarginEstimate>> {
    let m = pair_margins(dataset, policy, min_decisive)?;
    if m.is_empty() {
        return Err(Error::Undefined("no qualifying pairs".into()));
    }
    Ok(m)
}

pub fn render_quantiles_text(report: &QuantileReport) -> String {
    let mut s = format!("{:<10} {:>8} {:>12} {:>12}\n", "quantile", "|delta|", "n(a=0.05)", "n(a=0.01)");
    let fmt = |n: Option<u64>| n.map_or_else(|| "inf".to_owned(), |v| v.to_string());
    for r in &report.rows {
        s.push_str(&format!(
            "{:<10} {:>8.3} {:>12} {:>12}\n",
            format!("p{}", (r.level * 100.0).round()),
            r.abs_delta,
            fmt(r.n_alpha_05),
            fmt(r.n_alpha_01)
        ));
    }
    s
}

pub fn render_near_tie_text(r: &NearTieReport) -> String {
    format!(
        "{:<14} {:>6} {:>10} {:>10} {:>10}\n{:<14} {:>6} {:>10.3} {:>10} {:>10}\n",
        "condition",
        "count",
        "proportion",
        "median",
        "n(a=0.05)",
        format!("|delta|<={}", r.tau),
        r.count,
        r.proportion,
        r.median_abs_delta.map_or_else(|| "-".to_owned(), |m| format!("{m:.3}")),
        r.implied_n.map_or_else(|| "-".to_owned(), |n| n.to_string()),
    )
}
