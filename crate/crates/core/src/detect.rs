//! Monte-Carlo detectability: the probability that a test of `p = 1/2`
//! rejects when `n` decisive judgments are drawn from a pair's pool.
//!
//! Curves resample with replacement by default; the same-budget `z`
//! distribution draws exactly `n` judgments without replacement. Each
//! `(pair, n, trial)` uses its own stream derived from the seed.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PairAggregate, PairKey};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{detectability_z, quantile_sorted, RejectionRegion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    WithReplacement,
    WithoutReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Two-sided exact binomial test.
    Exact,
    /// Normal approximation; faster, slightly anti-conservative at small n.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    pub sampling: Sampling,
    pub test: TestKind,
}

impl CurveOptions {
    pub fn new(seed: u64) -> Self {
        Self { alpha: 0.05, trials: 2000, seed, sampling: Sampling::WithReplacement, test: TestKind::Exact }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityCurve {
    pub pair: PairKey,
    pub p_hat: f64,
    pub n_grid: Vec<u64>,
    pub power: Vec<f64>,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
}

impl DetectabilityCurve {
    /// Monte-Carlo standard error of each power estimate.
    pub fn standard_errors(&self) -> Vec<f64> {
        self.power.iter().map(|p| (p * (1.0 - p) / self.trials as f64).sqrt()).collect()
    }

    /// `pair,n,power,trials,alpha,seed` with 6-decimal reals.
    pub fn write_csv<W: Write>(&self, out: &mut W, header: bool) -> Result<()> {
        if header {
            writeln!(out, "pair,n,power,trials,alpha,seed")?;
        }
        for (n, p) in self.n_grid.iter().zip(&self.power) {
            writeln!(out, "{},{},{:.6},{},{:.6},{}", self.pair, n, p, self.trials, self.alpha, self.seed)?;
        }
        Ok(())
    }
}

/// Successes among `n` draws from a pool of `ones` positives out of `pool`.
pub(crate) fn draw_successes(rng: &mut ChaCha8Rng, ones: u64, pool: u64, n: u64, sampling: Sampling) -> u64 {
    match sampling {
        Sampling::WithReplacement => (0..n).filter(|_| rng.random_range(0..pool) < ones).count() as u64,
        Sampling::WithoutReplacement => {
            let (mut ones, mut pool, mut k) = (ones, pool, 0);
            for _ in 0..n {
                if rng.random_range(0..pool) < ones {
                    ones -= 1;
                    k += 1;
                }
                pool -= 1;
            }
            k
        }
    }
}

fn region(n: u64, opts: &CurveOptions) -> Result<RejectionRegion> {
    match opts.test {
        TestKind::Exact => RejectionRegion::exact(n, 0.5, opts.alpha),
        TestKind::Normal => RejectionRegion::normal(n, opts.alpha),
    }
}

/// Detection probability at each budget in `n_grid`, resampling the
/// pair's decisive judgments (ties dropped).
pub fn detectability_curve(agg: &PairAggregate, n_grid: &[u64], opts: &CurveOptions) -> Result<DetectabilityCurve> {
    let pool = agg.decisive();
    if pool == 0 {
        return Err(Error::Undefined(format!("pair {} has no decisive judgments", agg.pair)));
    }
    if opts.trials == 0 {
        return Err(Error::Usage("trials must be positive".into()));
    }
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::Usage("budget grid must be nonempty with every n > 0".into()));
    }
    if opts.sampling == Sampling::WithoutReplacement {
        if let Some(n) = n_grid.iter().find(|&&n| n > pool) {
            return Err(Error::Infeasible(format!(
                "cannot draw {n} judgments without replacement from a pool of {pool}"
            )));
        }
    }
    let pair_id = rng::label_hash(&agg.pair.to_string());
    let power = n_grid
        .iter()
        .map(|&n| {
            let reg = region(n, opts)?;
            let rejections: usize = (0..opts.trials)
                .into_par_iter()
                .map(|t| {
                    let mut g = rng::stream(opts.seed, &[pair_id, n, t as u64]);
                    reg.rejects(draw_successes(&mut g, agg.wins_second, pool, n, opts.sampling)) as usize
                })
                .sum();
            Ok(rejections as f64 / opts.trials as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DetectabilityCurve {
        pair: agg.pair.clone(),
        p_hat: agg.wins_second as f64 / pool as f64,
        n_grid: n_grid.to_vec(),
        power,
        alpha: opts.alpha,
        trials: opts.trials,
        seed: opts.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SameBudgetSummary {
    pub n: u64,
    pub pairs: usize,
    /// Finite `z` values pooled over pairs and trials.
    pub count: usize,
    /// Subsamples with `p_hat` of 0 or 1 (infinite `z`), excluded from the
    /// quantiles.
    pub excluded_infinite: usize,
    pub p10: f64,
    pub median: f64,
}

/// Pooled distribution of the same-budget detectability `z` over every
/// pair with at least `n` decisive judgments.
pub fn same_budget_z_for(
    aggs: &[PairAggregate],
    n: u64,
    trials: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<SameBudgetSummary> {
    if n == 0 || trials == 0 {
        return Err(Error::Usage("n and trials must be positive".into()));
    }
    let eligible: Vec<&PairAggregate> = aggs.iter().filter(|a| a.decisive() >= n).collect();
    if eligible.is_empty() {
        return Err(Error::Usage(format!("no pair has at least {n} decisive judgments")));
    }
    let zs: Vec<f64> = eligible
        .par_iter()
        .flat_map_iter(|agg| {
            let pair_id = rng::label_hash(&agg.pair.to_string());
            (0..trials).map(move |t| {
                let mut g = rng::stream(seed, &[pair_id, n, t as u64]);
                let k = draw_successes(&mut g, agg.wins_second, agg.decisive(), n, sampling);
                detectability_z(k as f64 / n as f64, n).expect("valid p_hat and n")
            })
        })
        .collect();
    let mut finite: Vec<f64> = zs.iter().copied().filter(|z| z.is_finite()).collect();
    let excluded = zs.len() - finite.len();
    if finite.is_empty() {
        return Err(Error::Undefined("every subsample was degenerate (p_hat of 0 or 1)".into()));
    }
    finite.sort_by(f64::total_cmp);
    Ok(SameBudgetSummary {
        n,
        pairs: eligible.len(),
        count: finite.len(),
        excluded_infinite: excluded,
        p10: quantile_sorted(&finite, 0.10),
        median: quantile_sorted(&finite, 0.5),
    })
}

/// [`same_budget_z_for`] over every pair of a dataset, sampling without
/// replacement.
pub fn same_budget_z(dataset: &Dataset, n: u64, trials: usize, seed: u64) -> Result<SameBudgetSummary> {
    let aggs: Vec<PairAggregate> = dataset.aggregates().into_values().collect();
    same_budget_z_for(&aggs, n, trials, seed, Sampling::WithoutReplacement)
}
