//! Correlated judgments: ICC-inflated sample sizes, cluster-robust
//! variance ratios and between/within prompt variance decomposition.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PairAggregate, PairKey};
use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// `n0 * rho` at or above this is reported as unattainable.
pub const INFEASIBLE_LOAD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationResult {
    pub n0: u64,
    pub rho: f64,
    /// `(1 - rho) / (1 - n0 rho)`; `None` when infeasible.
    pub inflation: Option<f64>,
    /// Unrounded nominal size.
    pub n_exact: Option<f64>,
    /// Nominal size rounded down for display.
    pub n_inflated: Option<u64>,
}

impl InflationResult {
    pub fn is_feasible(&self) -> bool {
        self.inflation.is_some()
    }
}

/// Nominal judgments needed for `n0` effective ones when every pair of
/// judgments correlates at `rho`: `n0 (1 - rho) / (1 - n0 rho)`.
pub fn inflated_sample_size(n0: u64, rho: f64) -> Result<InflationResult> {
    if n0 == 0 {
        return Err(Error::Domain("n0 must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho must lie in [0, 1), got {rho}")));
    }
    let load = n0 as f64 * rho;
    if load >= INFEASIBLE_LOAD {
        return Ok(InflationResult { n0, rho, inflation: None, n_exact: None, n_inflated: None });
    }
    let inflation = (1.0 - rho) / (1.0 - load);
    let n_exact = n0 as f64 * inflation;
    Ok(InflationResult {
        n0,
        rho,
        inflation: Some(inflation),
        n_exact: Some(n_exact),
        n_inflated: Some(n_exact.floor() as u64),
    })
}

/// Effective size of `n` judgments sharing correlation `rho`.
pub fn effective_sample_size(n: f64, rho: f64) -> f64 {
    n / (1.0 + (n - 1.0) * rho)
}

/// Every `(n0, rho)` combination, `n0`-major.
pub fn icc_table(n0s: &[u64], rhos: &[f64]) -> Result<Vec<InflationResult>> {
    let mut rows = Vec::with_capacity(n0s.len() * rhos.len());
    for &n0 in n0s {
        for &rho in rhos {
            rows.push(inflated_sample_size(n0, rho)?);
        }
    }
    Ok(rows)
}

/// Three decimals, truncated like the floored `n` column.
fn infl_cell(r: &InflationResult) -> String {
    r.inflation
        .map(|x| format!("{:.3}", (x * 1000.0 + 1e-9).floor() / 1000.0))
        .unwrap_or_else(|| "---".into())
}

fn n_cell(r: &InflationResult) -> String {
    r.n_inflated.map(|n| n.to_string()).unwrap_or_else(|| ">10000".into())
}

/// Aligned text table; infeasible cells read `---` and `>10000`.
pub fn render_icc_text(rows: &[InflationResult]) -> String {
    let mut out = format!("{:>8}  {:>8}  {:>8}  {:>8}\n", "rho", "n(rho=0)", "infl", "n_infl");
    for r in rows {
        out.push_str(&format!("{:>8.4}  {:>8}  {:>8}  {:>8}\n", r.rho, r.n0, infl_cell(r), n_cell(r)));
    }
    out
}

pub fn write_icc_csv<W: Write>(rows: &[InflationResult], mut out: W) -> Result<()> {
    writeln!(out, "n0,rho,inflation,n_inflated,n_exact")?;
    for r in rows {
        let exact = r.n_exact.map(|x| format!("{x:.6}")).unwrap_or_default();
        let infl = r.inflation.map(|x| format!("{x:.6}")).unwrap_or_else(|| "---".into());
        writeln!(out, "{},{:.6},{},{},{}", r.n0, r.rho, infl, n_cell(r), exact)?;
    }
    Ok(())
}

/// `(second wins, decisive)` per prompt with at least one decisive judgment.
fn clusters(agg: &PairAggregate) -> Vec<(u64, u64)> {
    agg.per_prompt
        .values()
        .filter(|c| c.decisive() > 0)
        .map(|c| (c.wins_second, c.decisive()))
        .collect()
}

/// Ratio of the prompt-clustered sandwich variance of the win rate to the
/// classical `p(1-p)/n`. Computed in exact integer arithmetic, so prompts
/// judged once each give exactly `1.0`.
pub fn cluster_robust_ratio(agg: &PairAggregate) -> Result<f64> {
    let cl = clusters(agg);
    if cl.len() < 2 {
        return Err(Error::Undefined(format!(
            "pair {} needs at least two judged prompts, found {}",
            agg.pair,
            cl.len()
        )));
    }
    let n: i128 = cl.iter().map(|c| c.1 as i128).sum();
    let s: i128 = cl.iter().map(|c| c.0 as i128).sum();
    if s == 0 || s == n {
        return Err(Error::Undefined(format!("pair {} has a degenerate win rate", agg.pair)));
    }
    // sum_c (s_c - n_c p)^2 / n^2  over  p(1-p)/n, scaled by n^4
    let num: i128 = cl.iter().map(|&(sc, nc)| (n * sc as i128 - nc as i128 * s).pow(2)).sum();
    let den: i128 = n * s * (n - s);
    Ok(num as f64 / den as f64)
}

/// Ratio per pair with at least two judged prompts and a non-degenerate
/// win rate.
pub fn cluster_robust_ratios(dataset: &Dataset, min_decisive: u64) -> Vec<(PairKey, f64)> {
    dataset
        .aggregates()
        .into_values()
        .filter(|a| a.decisive() >= min_decisive)
        .filter_map(|a| cluster_robust_ratio(&a).ok().map(|r| (a.pair.clone(), r)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub pair: PairKey,
    pub prompts: usize,
    /// Sample variance across prompts of per-prompt win rates.
    pub between_prompt: f64,
    /// Mean unbiased within-prompt variance over prompts judged at least
    /// twice; 0 when no prompt repeats.
    pub within_prompt: f64,
    pub repeated_prompts: usize,
}

impl VarianceDecomposition {
    /// Between-prompt variance relative to another protocol's.
    pub fn between_ratio(&self, other: &Self) -> Option<f64> {
        (other.between_prompt > 0.0).then(|| self.between_prompt / other.between_prompt)
    }
}

pub fn variance_decomposition(agg: &PairAggregate) -> Result<VarianceDecomposition> {
    let cl = clusters(agg);
    if cl.len() < 2 {
        return Err(Error::Undefined(format!(
            "pair {} needs at least two judged prompts, found {}",
            agg.pair,
            cl.len()
        )));
    }
    let rates: Vec<f64> = cl.iter().map(|&(s, n)| s as f64 / n as f64).collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let between = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rates.len() - 1) as f64;
    let within: Vec<f64> = cl
        .iter()
        .filter(|c| c.1 >= 2)
        .map(|&(s, n)| (s * (n - s)) as f64 / (n * (n - 1)) as f64)
        .collect();
    let within_prompt = if within.is_empty() { 0.0 } else { within.iter().sum::<f64>() / within.len() as f64 };
    Ok(VarianceDecomposition {
        pair: agg.pair.clone(),
        prompts: cl.len(),
        between_prompt: between,
        within_prompt,
        repeated_prompts: within.len(),
    })
}

/// Decomposition of every pair with at least `min_prompts` judged prompts.
pub fn decompose_all(dataset: &Dataset, min_prompts: usize) -> Vec<VarianceDecomposition> {
    dataset
        .aggregates()
        .into_values()
        .filter_map(|a| variance_decomposition(&a).ok())
        .filter(|d| d.prompts >= min_prompts.max(2))
        .collect()
}

/// Medians over pairs evaluated under two protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolComparison {
    pub aligned_pairs: usize,
    pub median_between_a: f64,
    pub median_between_b: f64,
    pub median_within_a: f64,
    pub median_within_b: f64,
    /// Median of per-pair `between_a / between_b`.
    pub median_between_ratio: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

pub fn compare_protocols(a: &[VarianceDecomposition], b: &[VarianceDecomposition]) -> Result<ProtocolComparison> {
    let aligned: Vec<(&VarianceDecomposition, &VarianceDecomposition)> =
        a.iter().filter_map(|x| b.iter().find(|y| y.pair == x.pair).map(|y| (x, y))).collect();
    if aligned.is_empty() {
        return Err(Error::Undefined("no pair is decomposable under both protocols".into()));
    }
    let ratios: Vec<f64> = aligned.iter().filter_map(|(x, y)| x.between_ratio(y)).collect();
    Ok(ProtocolComparison {
        aligned_pairs: aligned.len(),
        median_between_a: median(aligned.iter().map(|p| p.0.between_prompt).collect()),
        median_between_b: median(aligned.iter().map(|p| p.1.between_prompt).collect()),
        median_within_a: median(aligned.iter().map(|p| p.0.within_prompt).collect()),
        median_within_b: median(aligned.iter().map(|p| p.1.within_prompt).collect()),
        median_between_ratio: (!ratios.is_empty()).then(|| median(ratios)),
    })
}

pub fn write_decomposition_csv<W: Write>(rows: &[VarianceDecomposition], mut out: W) -> Result<()> {
    writeln!(out, "pair,prompts,between_prompt,within_prompt,repeated_prompts")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{}",
            r.pair, r.prompts, r.between_prompt, r.within_prompt, r.repeated_prompts
        )?;
    }
    Ok(())
}
