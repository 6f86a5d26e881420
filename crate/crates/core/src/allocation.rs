//! Allocating a judgment budget across prompt types.
//!
//! Two policies are supported: proportional allocation (`N_i ~ B w_i`) and
//! two-stage screening, which spends `b` judgments per type to estimate
//! each type's margin, keeps the `ceil(q m)` types with the largest
//! `delta_hat^2`, spreads the rest of the budget over them by weight and
//! tests only those second-stage outcomes.
//!
//! Policies run against a [`JudgmentSource`]: either a synthetic
//! [`PromptTypeModel`] with unlimited Bernoulli supply, or a fixed pool of
//! collected judgments drawn without replacement (offline replay).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PairKey};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{exact_binomial_test, RejectionRegion};

/// Largest margin a synthetic type may carry.
pub const MAX_TYPE_DELTA: f64 = 0.25;

/// Concentration threshold above which two-stage screening is advised.
pub const KAPPA_THRESHOLD: f64 = 1.5;

/// Incidence weights and per-type margins of a synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTypeModel {
    weights: Vec<f64>,
    deltas: Vec<f64>,
}

impl PromptTypeModel {
    pub fn new(weights: Vec<f64>, deltas: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("at least one prompt type is required".into()));
        }
        if weights.len() != deltas.len() {
            return Err(Error::Usage(format!(
                "{} weights but {} deltas",
                weights.len(),
                deltas.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::Domain(format!("weights must be positive, got {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("weights must sum to 1, got {total}")));
        }
        if let Some(d) = deltas.iter().find(|d| !(d.abs() <= MAX_TYPE_DELTA)) {
            return Err(Error::Domain(format!("|delta| must be at most {MAX_TYPE_DELTA}, got {d}")));
        }
        Ok(Self { weights, deltas })
    }

    /// Equal weights `1/m`.
    pub fn uniform(deltas: Vec<f64>) -> Result<Self> {
        let m = deltas.len().max(1);
        let mut weights = vec![1.0 / m as f64; deltas.len()];
        // absorb rounding so the simplex check holds exactly
        if let Some(last) = weights.last_mut() {
            *last = 1.0 - (m - 1) as f64 / m as f64;
        }
        Self::new(weights, deltas)
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// Average squared margin `sum w_i delta_i^2`.
    pub fn mu2(&self) -> f64 {
        weighted_signal(&self.weights, &self.deltas).iter().sum()
    }

    /// Oracle top set ranked by `w_i delta_i^2`.
    pub fn oracle_set(&self, q: f64) -> Vec<usize> {
        top_indices(&weighted_signal(&self.weights, &self.deltas), retained_count(q, self.m()))
    }

    /// Weight-averaged squared margin over the top `ceil(q m)` types by
    /// `delta_i^2`.
    pub fn mu2_q(&self, q: f64) -> f64 {
        let sq: Vec<f64> = self.deltas.iter().map(|d| d * d).collect();
        let top = top_indices(&sq, retained_count(q, self.m()));
        let w: f64 = top.iter().map(|&i| self.weights[i]).sum();
        top.iter().map(|&i| self.weights[i] * sq[i]).sum::<f64>() / w
    }
}

fn weighted_signal(weights: &[f64], deltas: &[f64]) -> Vec<f64> {
    weights.iter().zip(deltas).map(|(w, d)| w * d * d).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AllocationPolicy {
    Proportional,
    TwoStage { b: u64, q: f64 },
}

impl AllocationPolicy {
    pub fn two_stage(b: u64, q: f64) -> Result<Self> {
        if b == 0 {
            return Err(Error::Domain("screening budget b must be at least 1".into()));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Domain(format!("retention fraction q must lie in (0, 1], got {q}")));
        }
        Ok(Self::TwoStage { b, q })
    }

    /// `b = ceil(10 ln m)` (at least 1) and `q = 0.2`.
    pub fn default_two_stage(m: usize) -> Self {
        Self::TwoStage { b: default_screening_budget(m), q: 0.2 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Proportional => "proportional",
            Self::TwoStage { .. } => "two_stage",
        }
    }

    /// Errors when the policy cannot spend `budget` over `m` types.
    pub fn check_budget(&self, m: usize, budget: u64) -> Result<()> {
        if budget == 0 {
            return Err(Error::Infeasible("budget must be positive".into()));
        }
        if let Self::TwoStage { b, .. } = *self {
            let screening = b * m as u64;
            if budget < screening {
                return Err(Error::Infeasible(format!(
                    "budget {budget} is below the screening cost m*b = {screening}"
                )));
            }
            if budget == screening {
                return Err(Error::Infeasible(format!(
                    "budget {budget} leaves nothing for the second stage after screening"
                )));
            }
        }
        Ok(())
    }
}

pub fn default_screening_budget(m: usize) -> u64 {
    ((10.0 * (m as f64).ln()).ceil() as u64).max(1)
}

/// `ceil(q m)`, guarded against floating overshoot such as `0.1 * 30`.
pub fn retained_count(q: f64, m: usize) -> usize {
    ((q * m as f64 - 1e-9).ceil() as usize).clamp(1, m.max(1))
}

/// Indices of the `k` largest scores, ties to the lower index, returned in
/// increasing index order.
pub fn top_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Largest-remainder apportionment of `budget` proportionally to
/// `weights` (normalized internally). Remainder ties go to the lower index.
pub fn proportional_allocate(weights: &[f64], budget: u64) -> Vec<u64> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) {
        return vec![0; weights.len()];
    }
    let raw: Vec<f64> = weights.iter().map(|w| budget as f64 * w / total).collect();
    let mut counts: Vec<u64> = raw.iter().map(|r| r.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut short = budget.saturating_sub(assigned) as usize;
    if short > 0 {
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if short == 0 {
                break;
            }
            counts[i] += 1;
            short -= 1;
        }
    }
    counts
}

/// Proportional apportionment with per-type caps: types that would exceed
/// their cap are filled to it and the excess is re-apportioned among the
/// rest. `None` when the caps cannot absorb the budget.
pub fn capped_allocate(weights: &[f64], caps: &[u64], budget: u64) -> Option<Vec<u64>> {
    if saturating_total(caps) < budget {
        return None;
    }
    let mut counts = vec![0u64; weights.len()];
    let mut open: Vec<usize> = (0..weights.len()).filter(|&i| caps[i] > 0).collect();
    let mut left = budget;
    while left > 0 {
        let w: Vec<f64> = open.iter().map(|&i| weights[i]).collect();
        let share = proportional_allocate(&w, left);
        let mut saturated = false;
        for (&i, &s) in open.iter().zip(&share) {
            if counts[i] + s > caps[i] {
                saturated = true;
            }
        }
        if !saturated {
            for (&i, &s) in open.iter().zip(&share) {
                counts[i] += s;
            }
            break;
        }
        for (&i, &s) in open.iter().zip(&share) {
            if counts[i] + s >= caps[i] {
                left -= caps[i] - counts[i];
                counts[i] = caps[i];
            }
        }
        open.retain(|&i| counts[i] < caps[i]);
    }
    Some(counts)
}

fn saturating_total(caps: &[u64]) -> u64 {
    caps.iter().fold(0u64, |acc, &c| acc.saturating_add(c))
}

/// `min_i N_i / w_i`.
pub fn allocation_bottleneck(counts: &[u64], weights: &[f64]) -> Result<f64> {
    if counts.len() != weights.len() || counts.is_empty() {
        return Err(Error::Usage("counts and weights must be non-empty and of equal length".into()));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Domain("weights must be positive".into()));
    }
    Ok(counts
        .iter()
        .zip(weights)
        .map(|(&n, w)| n as f64 / w)
        .fold(f64::INFINITY, f64::min))
}

/// Supplier of judgments per prompt type. `draw` returns how many of `n`
/// judgments favored the second model.
pub trait JudgmentSource {
    fn m(&self) -> usize;
    fn weights(&self) -> &[f64];
    /// Judgments still available for type `i`.
    fn capacity(&self, i: usize) -> u64;
    fn draw(&mut self, i: usize, n: u64, rng: &mut ChaCha8Rng) -> u64;
}

/// Unlimited i.i.d. `Bernoulli(1/2 + delta_i)` judgments.
#[derive(Debug, Clone, Copy)]
pub struct ModelSource<'a> {
    model: &'a PromptTypeModel,
}

impl<'a> ModelSource<'a> {
    pub fn new(model: &'a PromptTypeModel) -> Self {
        Self { model }
    }
}

impl JudgmentSource for ModelSource<'_> {
    fn m(&self) -> usize {
        self.model.m()
    }

    fn weights(&self) -> &[f64] {
        self.model.weights()
    }

    fn capacity(&self, _: usize) -> u64 {
        u64::MAX
    }

    fn draw(&mut self, i: usize, n: u64, rng: &mut ChaCha8Rng) -> u64 {
        let p = 0.5 + self.model.deltas[i];
        (0..n).filter(|_| rng.random_bool(p)).count() as u64
    }
}

/// Fixed judgment pool, one `(second wins, first wins)` urn per type,
/// sampled without replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentPool {
    labels: Vec<String>,
    weights: Vec<f64>,
    ones: Vec<u64>,
    zeros: Vec<u64>,
}

impl JudgmentPool {
    /// Types weighted by their share of the pool.
    pub fn new(labels: Vec<String>, ones: Vec<u64>, zeros: Vec<u64>) -> Result<Self> {
        if labels.is_empty() || labels.len() != ones.len() || ones.len() != zeros.len() {
            return Err(Error::Usage("pool needs matching, non-empty labels and counts".into()));
        }
        let sizes: Vec<u64> = ones.iter().zip(&zeros).map(|(a, b)| a + b).collect();
        if sizes.contains(&0) {
            return Err(Error::Domain("every pooled prompt type needs at least one judgment".into()));
        }
        let total: u64 = sizes.iter().sum();
        let weights = sizes.iter().map(|&s| s as f64 / total as f64).collect();
        Ok(Self { labels, weights, ones, zeros })
    }

    /// Decisive judgments of `pair` grouped by prompt type.
    pub fn from_dataset(dataset: &Dataset, pair: &PairKey) -> Result<Self> {
        let by_type = dataset.decisive_by_type(pair);
        if by_type.is_empty() {
            return Err(Error::Undefined(format!("pair {pair} has no decisive judgments")));
        }
        let (mut labels, mut ones, mut zeros) = (Vec::new(), Vec::new(), Vec::new());
        for (label, (a, b)) in by_type {
            labels.push(label);
            ones.push(a);
            zeros.push(b);
        }
        Self::new(labels, ones, zeros)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn total(&self) -> u64 {
        self.ones.iter().chain(&self.zeros).sum()
    }

    /// Empirical margin of each type.
    pub fn deltas(&self) -> Vec<f64> {
        self.ones
            .iter()
            .zip(&self.zeros)
            .map(|(&a, &b)| a as f64 / (a + b) as f64 - 0.5)
            .collect()
    }
}

impl JudgmentSource for JudgmentPool {
    fn m(&self) -> usize {
        self.labels.len()
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn capacity(&self, i: usize) -> u64 {
        self.ones[i] + self.zeros[i]
    }

    fn draw(&mut self, i: usize, n: u64, rng: &mut ChaCha8Rng) -> u64 {
        let mut k = 0;
        for _ in 0..n.min(self.capacity(i)) {
            if rng.random_range(0..self.capacity(i)) < self.ones[i] {
                self.ones[i] -= 1;
                k += 1;
            } else {
                self.zeros[i] -= 1;
            }
        }
        k
    }
}

/// What one execution of a policy did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    /// Judgments spent per type over both stages.
    pub counts: Vec<u64>,
    /// Screening judgments per type (empty for proportional).
    pub stage1_counts: Vec<u64>,
    /// Retained types (empty for proportional).
    pub selected: Vec<usize>,
    /// Screening estimates `delta_hat_i` (empty for proportional).
    pub delta_hat: Vec<f64>,
    /// Judgments entering the test.
    pub tested_n: u64,
    /// Second-model wins among the tested judgments.
    pub successes: u64,
    pub reject: bool,
    /// Judgments placed outside the retained set because it ran dry
    /// (pool replay only).
    pub spillover: u64,
}

impl TrialOutcome {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Test decisions shared by all trials of a run.
struct Tester {
    alpha: f64,
    region: Option<RejectionRegion>,
}

impl Tester {
    fn new(alpha: f64, nominal_n: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let region = if nominal_n > 0 { Some(RejectionRegion::exact(nominal_n, 0.5, alpha)?) } else { None };
        Ok(Self { alpha, region })
    }

    fn rejects(&self, successes: u64, n: u64) -> Result<bool> {
        match &self.region {
            Some(r) if r.n() == n => Ok(r.rejects(successes)),
            _ if n == 0 => Ok(false),
            _ => Ok(exact_binomial_test(successes, n, 0.5)? < self.alpha),
        }
    }
}

fn nominal_tested_n(policy: &AllocationPolicy, m: usize, budget: u64) -> u64 {
    match *policy {
        AllocationPolicy::Proportional => budget,
        AllocationPolicy::TwoStage { b, .. } => budget - b * m as u64,
    }
}

fn run_trial<S: JudgmentSource>(
    source: &mut S,
    policy: &AllocationPolicy,
    budget: u64,
    tester: &Tester,
    strict: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TrialOutcome> {
    let m = source.m();
    let caps: Vec<u64> = (0..m).map(|i| source.capacity(i)).collect();
    match *policy {
        AllocationPolicy::Proportional => {
            let counts = capped_allocate(source.weights(), &caps, budget)
                .ok_or_else(|| Error::Infeasible(format!("pool cannot supply {budget} judgments")))?;
            let successes = (0..m).map(|i| source.draw(i, counts[i], rng)).sum();
            Ok(TrialOutcome {
                reject: tester.rejects(successes, budget)?,
                counts,
                stage1_counts: Vec::new(),
                selected: Vec::new(),
                delta_hat: Vec::new(),
                tested_n: budget,
                successes,
                spillover: 0,
            })
        }
        AllocationPolicy::TwoStage { b, q } => {
            let stage1_counts: Vec<u64> = caps.iter().map(|&c| c.min(b)).collect();
            let delta_hat: Vec<f64> = (0..m)
                .map(|i| {
                    let n = stage1_counts[i];
                    let wins = source.draw(i, n, rng);
                    if n == 0 { 0.0 } else { wins as f64 / n as f64 - 0.5 }
                })
                .collect();
            let sq: Vec<f64> = delta_hat.iter().map(|d| d * d).collect();
            let selected = top_indices(&sq, retained_count(q, m));
            let stage2 = budget - stage1_counts.iter().sum::<u64>();

            let w_sel: Vec<f64> = selected.iter().map(|&i| source.weights()[i]).collect();
            let cap_sel: Vec<u64> = selected.iter().map(|&i| source.capacity(i)).collect();
            let mut stage2_counts = vec![0u64; m];
            let mut spillover = 0;
            let in_retained = stage2.min(saturating_total(&cap_sel));
            if in_retained < stage2 && strict {
                return Err(Error::Infeasible(format!(
                    "retained types hold {in_retained} judgments but the second stage needs {stage2}"
                )));
            }
            let alloc = capped_allocate(&w_sel, &cap_sel, in_retained).expect("capacity checked");
            for (&i, &n) in selected.iter().zip(&alloc) {
                stage2_counts[i] = n;
            }
            if in_retained < stage2 {
                spillover = stage2 - in_retained;
                let rest: Vec<usize> = (0..m).filter(|i| !selected.contains(i)).collect();
                let w_rest: Vec<f64> = rest.iter().map(|&i| source.weights()[i]).collect();
                let cap_rest: Vec<u64> = rest.iter().map(|&i| source.capacity(i)).collect();
                let alloc = capped_allocate(&w_rest, &cap_rest, spillover)
                    .ok_or_else(|| Error::Infeasible(format!("pool cannot supply {budget} judgments")))?;
                for (&i, &n) in rest.iter().zip(&alloc) {
                    stage2_counts[i] = n;
                }
            }
            let successes = (0..m).map(|i| source.draw(i, stage2_counts[i], rng)).sum();
            let counts = stage1_counts.iter().zip(&stage2_counts).map(|(a, b)| a + b).collect();
            Ok(TrialOutcome {
                reject: tester.rejects(successes, stage2)?,
                counts,
                stage1_counts,
                selected,
                delta_hat,
                tested_n: stage2,
                successes,
                spillover,
            })
        }
    }
}

fn policy_code(policy: &AllocationPolicy) -> u64 {
    match policy {
        AllocationPolicy::Proportional => 1,
        AllocationPolicy::TwoStage { .. } => 2,
    }
}

/// One execution of `policy` against the synthetic model.
pub fn two_stage_allocate(model: &PromptTypeModel, budget: u64, b: u64, q: f64, alpha: f64, seed: u64) -> Result<TrialOutcome> {
    let policy = AllocationPolicy::two_stage(b, q)?;
    run_once(model, &policy, budget, alpha, seed)
}

/// One execution of any policy against the synthetic model, using the
/// stream of trial 0 of [`simulate_power`].
pub fn run_once(model: &PromptTypeModel, policy: &AllocationPolicy, budget: u64, alpha: f64, seed: u64) -> Result<TrialOutcome> {
    policy.check_budget(model.m(), budget)?;
    let tester = Tester::new(alpha, nominal_tested_n(policy, model.m(), budget))?;
    let mut rng = rng::stream(seed, &[policy_code(policy), budget, 0]);
    run_trial(&mut ModelSource::new(model), policy, budget, &tester, false, &mut rng)
}

/// Per-run diagnostics of an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationDiagnostics {
    /// `min_i N_i / w_i` for this realization.
    pub lambda_pi: f64,
    pub mu2: f64,
    pub mu2_q: f64,
    /// `sum_{top} delta_hat^2 / (q sum delta_hat^2)`; `None` without
    /// screening estimates or when they are all zero.
    pub kappa_stat: Option<f64>,
    /// Overlap of the retained set with the oracle set.
    pub jaccard: Option<f64>,
    /// Share of `sum w delta^2` carried by the retained types.
    pub signal_mass: Option<f64>,
    /// Reference floor `exp(-mu2 * lambda_pi) / 2`.
    pub error_floor: f64,
}

/// `sum_{top ceil(qm)} x^2 / (q sum x^2)`.
pub fn kappa_statistic(delta_hat: &[f64], q: f64) -> Option<f64> {
    let sq: Vec<f64> = delta_hat.iter().map(|d| d * d).collect();
    let total: f64 = sq.iter().sum();
    if sq.is_empty() || total <= 0.0 {
        return None;
    }
    let top: f64 = top_indices(&sq, retained_count(q, sq.len())).iter().map(|&i| sq[i]).sum();
    Some(top / (q * total))
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|i| b.contains(i)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

fn signal_mass_of(weights: &[f64], deltas: &[f64], selected: &[usize]) -> Option<f64> {
    let signal = weighted_signal(weights, deltas);
    let total: f64 = signal.iter().sum();
    (total > 0.0).then(|| selected.iter().map(|&i| signal[i]).sum::<f64>() / total)
}

fn diagnostics_for(weights: &[f64], deltas: &[f64], q: f64, outcome: &TrialOutcome) -> Result<AllocationDiagnostics> {
    let mu2: f64 = weighted_signal(weights, deltas).iter().sum();
    let sq: Vec<f64> = deltas.iter().map(|d| d * d).collect();
    let top = top_indices(&sq, retained_count(q, deltas.len()));
    let w_top: f64 = top.iter().map(|&i| weights[i]).sum();
    let mu2_q = top.iter().map(|&i| weights[i] * sq[i]).sum::<f64>() / w_top;
    let lambda_pi = allocation_bottleneck(&outcome.counts, weights)?;
    let screened = !outcome.delta_hat.is_empty();
    let oracle = top_indices(&weighted_signal(weights, deltas), retained_count(q, deltas.len()));
    Ok(AllocationDiagnostics {
        lambda_pi,
        mu2,
        mu2_q,
        kappa_stat: if screened { kappa_statistic(&outcome.delta_hat, q) } else { None },
        jaccard: screened.then(|| jaccard(&outcome.selected, &oracle)),
        signal_mass: if screened { signal_mass_of(weights, deltas, &outcome.selected) } else { None },
        error_floor: 0.5 * (-mu2 * lambda_pi).exp(),
    })
}

/// Diagnostics of one realized allocation. `q` sets the size of the
/// oracle and top sets (for proportional runs, pass the comparison `q`).
pub fn diagnostics(model: &PromptTypeModel, q: f64, outcome: &TrialOutcome) -> Result<AllocationDiagnostics> {
    if outcome.counts.len() != model.m() {
        return Err(Error::Usage(format!(
            "outcome covers {} types, model has {}",
            outcome.counts.len(),
            model.m()
        )));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("q must lie in (0, 1], got {q}")));
    }
    diagnostics_for(model.weights(), model.deltas(), q, outcome)
}

/// Monte-Carlo power of a policy and averaged diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub policy: AllocationPolicy,
    pub budget: u64,
    pub alpha: f64,
    pub trials: usize,
    pub rejections: usize,
    pub power: f64,
    pub lambda_mean: f64,
    pub jaccard_mean: Option<f64>,
    pub signal_mass_mean: Option<f64>,
    /// Mean over trials where the statistic is defined.
    pub kappa_mean: Option<f64>,
    /// Trials that had to place judgments outside the retained set.
    pub spillover_trials: usize,
    pub seed: u64,
}

impl PowerEstimate {
    pub fn standard_error(&self) -> f64 {
        (self.power * (1.0 - self.power) / self.trials as f64).sqrt()
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(
    policy: &AllocationPolicy,
    budget: u64,
    alpha: f64,
    seed: u64,
    runs: Vec<(TrialOutcome, AllocationDiagnostics)>,
) -> PowerEstimate {
    let trials = runs.len();
    let rejections = runs.iter().filter(|(o, _)| o.reject).count();
    PowerEstimate {
        policy: *policy,
        budget,
        alpha,
        trials,
        rejections,
        power: rejections as f64 / trials as f64,
        lambda_mean: runs.iter().map(|(_, d)| d.lambda_pi).sum::<f64>() / trials as f64,
        jaccard_mean: mean_of(runs.iter().map(|(_, d)| d.jaccard)),
        signal_mass_mean: mean_of(runs.iter().map(|(_, d)| d.signal_mass)),
        kappa_mean: mean_of(runs.iter().map(|(_, d)| d.kappa_stat)),
        spillover_trials: runs.iter().filter(|(o, _)| o.spillover > 0).count(),
        seed,
    }
}

fn policy_q(policy: &AllocationPolicy, fallback: f64) -> f64 {
    match *policy {
        AllocationPolicy::TwoStage { q, .. } => q,
        AllocationPolicy::Proportional => fallback,
    }
}

/// Fraction of `trials` in which `policy` rejects `p = 1/2` on the
/// synthetic model at total budget `budget`. Trial `t` uses the stream
/// `(seed, policy, budget, t)`.
pub fn simulate_power(
    model: &PromptTypeModel,
    policy: &AllocationPolicy,
    budget: u64,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<PowerEstimate> {
    if trials == 0 {
        return Err(Error::Usage("trials must be positive".into()));
    }
    policy.check_budget(model.m(), budget)?;
    let tester = Tester::new(alpha, nominal_tested_n(policy, model.m(), budget))?;
    let q = policy_q(policy, 0.2);
    let runs = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, &[policy_code(policy), budget, t as u64]);
            let outcome = run_trial(&mut ModelSource::new(model), policy, budget, &tester, false, &mut rng)?;
            let diag = diagnostics_for(model.weights(), model.deltas(), q, &outcome)?;
            Ok((outcome, diag))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(policy, budget, alpha, seed, runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayOptions {
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    /// Fail instead of spilling the second stage onto non-retained types
    /// when the retained types run out of judgments.
    pub strict: bool,
}

impl ReplayOptions {
    pub fn new(seed: u64) -> Self {
        Self { alpha: 0.05, trials: 1000, seed, strict: false }
    }
}

/// Power of `policy` when every trial draws `budget` judgments without
/// replacement from the pair's collected pool, grouped by prompt type.
/// Types are weighted by their pool share; diagnostics treat each type's
/// pooled win rate as its true margin.
pub fn offline_replay(
    dataset: &Dataset,
    pair: &PairKey,
    policy: &AllocationPolicy,
    budget: u64,
    opts: &ReplayOptions,
) -> Result<PowerEstimate> {
    let pool = JudgmentPool::from_dataset(dataset, pair)?;
    replay_pool(&pool, policy, budget, opts)
}

/// [`offline_replay`] against an explicit pool.
pub fn replay_pool(pool: &JudgmentPool, policy: &AllocationPolicy, budget: u64, opts: &ReplayOptions) -> Result<PowerEstimate> {
    if opts.trials == 0 {
        return Err(Error::Usage("trials must be positive".into()));
    }
    if pool.total() < budget {
        return Err(Error::Infeasible(format!(
            "budget {budget} exceeds the pool of {} decisive judgments",
            pool.total()
        )));
    }
    policy.check_budget(pool.m(), budget)?;
    let tester = Tester::new(opts.alpha, nominal_tested_n(policy, pool.m(), budget))?;
    let deltas = pool.deltas();
    let q = policy_q(policy, 0.2);
    let runs = (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(opts.seed, &[policy_code(policy), budget, t as u64]);
            let mut urn = pool.clone();
            let outcome = run_trial(&mut urn, policy, budget, &tester, opts.strict, &mut rng)?;
            let diag = diagnostics_for(&pool.weights, &deltas, q, &outcome)?;
            Ok((outcome, diag))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(policy, budget, opts.alpha, opts.seed, runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{JudgmentRecord, Outcome};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn concentrated() -> PromptTypeModel {
        let mut d = vec![0.0; 20];
        d[0] = 0.25;
        PromptTypeModel::uniform(d).unwrap()
    }

    #[test]
    fn model_validation() {
        assert!(PromptTypeModel::new(vec![0.5, 0.5], vec![0.1, 0.0]).is_ok());
        assert!(PromptTypeModel::new(vec![0.6, 0.5], vec![0.1, 0.0]).is_err());
        assert!(PromptTypeModel::new(vec![1.0, 0.0], vec![0.1, 0.0]).is_err());
        assert!(PromptTypeModel::new(vec![1.0], vec![0.3]).is_err());
        assert!(PromptTypeModel::new(vec![], vec![]).is_err());
        assert!(PromptTypeModel::new(vec![1.0], vec![0.1, 0.1]).is_err());
        for m in [1, 3, 7, 20, 49] {
            assert!(PromptTypeModel::uniform(vec![0.0; m]).is_ok(), "m={m}");
        }
    }

    #[test]
    fn proportional_examples() {
        assert_eq!(proportional_allocate(&[0.25; 4], 100), vec![25; 4]);
        assert_eq!(proportional_allocate(&[0.5, 0.3, 0.2], 10), vec![5, 3, 2]);
        assert_eq!(proportional_allocate(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
    }

    #[test]
    fn retained_count_avoids_overshoot() {
        assert_eq!(retained_count(0.1, 30), 3);
        assert_eq!(retained_count(0.1, 20), 2);
        assert_eq!(retained_count(0.2, 7), 2);
        assert_eq!(retained_count(1.0, 5), 5);
        assert_eq!(retained_count(0.01, 5), 1);
    }

    #[test]
    fn default_parameters() {
        assert_eq!(default_screening_budget(20), 30);
        assert_eq!(default_screening_budget(1), 1);
        assert_eq!(AllocationPolicy::default_two_stage(20), AllocationPolicy::TwoStage { b: 30, q: 0.2 });
    }

    #[test]
    fn bottleneck_examples() {
        let w = [0.5, 0.3, 0.2];
        assert!((allocation_bottleneck(&[50, 30, 20], &w).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(allocation_bottleneck(&[60, 40, 0], &w).unwrap(), 0.0);
        assert!(allocation_bottleneck(&[1, 2], &w).is_err());
    }

    #[test]
    fn capped_allocation_redistributes() {
        let c = capped_allocate(&[0.5, 0.25, 0.25], &[10, 100, 100], 100).unwrap();
        assert_eq!(c, vec![10, 45, 45]);
        assert!(capped_allocate(&[0.5, 0.5], &[3, 4], 8).is_none());
        assert_eq!(capped_allocate(&[0.5, 0.5], &[3, 5], 8).unwrap(), vec![3, 5]);
    }

    #[test]
    fn two_stage_budget_errors() {
        let m = concentrated();
        assert!(matches!(two_stage_allocate(&m, 999, 50, 0.1, 0.05, 1), Err(Error::Infeasible(_))));
        assert!(matches!(two_stage_allocate(&m, 1000, 50, 0.1, 0.05, 1), Err(Error::Infeasible(_))));
        assert!(two_stage_allocate(&m, 1001, 50, 0.1, 0.05, 1).is_ok());
        assert!(AllocationPolicy::two_stage(0, 0.1).is_err());
        assert!(AllocationPolicy::two_stage(5, 0.0).is_err());
        assert!(AllocationPolicy::two_stage(5, 1.5).is_err());
    }

    #[test]
    fn two_stage_outcome_is_consistent() {
        let m = concentrated();
        let o = two_stage_allocate(&m, 2000, 50, 0.1, 0.05, 9).unwrap();
        assert_eq!(o.total(), 2000);
        assert_eq!(o.stage1_counts, vec![50; 20]);
        assert_eq!(o.selected.len(), 2);
        assert_eq!(o.tested_n, 1000);
        // stage-2 judgments only land on retained types
        for i in 0..20 {
            let extra = o.counts[i] - o.stage1_counts[i];
            assert_eq!(extra > 0, o.selected.contains(&i), "type {i}");
        }
        assert!(o.successes <= o.tested_n);
    }

    /// Counts every judgment drawn, by stage.
    struct Counting<'a> {
        inner: ModelSource<'a>,
        drawn: u64,
        wins: u64,
    }

    impl JudgmentSource for Counting<'_> {
        fn m(&self) -> usize {
            self.inner.m()
        }
        fn weights(&self) -> &[f64] {
            self.inner.weights()
        }
        fn capacity(&self, i: usize) -> u64 {
            self.inner.capacity(i)
        }
        fn draw(&mut self, i: usize, n: u64, rng: &mut ChaCha8Rng) -> u64 {
            let k = self.inner.draw(i, n, rng);
            self.drawn += n;
            self.wins += k;
            k
        }
    }

    #[test]
    fn test_uses_only_second_stage_outcomes() {
        let model = concentrated();
        let policy = AllocationPolicy::two_stage(50, 0.1).unwrap();
        let tester = Tester::new(0.05, 1000).unwrap();
        for t in 0..50 {
            let mut src = Counting { inner: ModelSource::new(&model), drawn: 0, wins: 0 };
            let mut rng = rng::stream(3, &[t]);
            let o = run_trial(&mut src, &policy, 2000, &tester, false, &mut rng).unwrap();
            let stage1_wins: u64 = o.delta_hat.iter().map(|d| ((d + 0.5) * 50.0).round() as u64).sum();
            assert_eq!(src.drawn, 2000);
            assert_eq!(src.wins - stage1_wins, o.successes);
            assert_eq!(o.tested_n, src.drawn - 1000);
        }
    }

    #[test]
    fn single_type_two_stage_matches_proportional_on_the_remainder() {
        let model = PromptTypeModel::uniform(vec![0.1]).unwrap();
        let ts = simulate_power(&model, &AllocationPolicy::two_stage(20, 1.0).unwrap(), 220, 0.05, 4000, 5).unwrap();
        let pr = simulate_power(&model, &AllocationPolicy::Proportional, 200, 0.05, 4000, 6).unwrap();
        let exact = RejectionRegion::exact(200, 0.5, 0.05).unwrap().power_at(0.6);
        let se = (exact * (1.0 - exact) / 4000.0).sqrt();
        assert!((ts.power - exact).abs() < 4.0 * se, "{} vs {exact}", ts.power);
        assert!((pr.power - exact).abs() < 4.0 * se, "{} vs {exact}", pr.power);
        assert_eq!(ts.jaccard_mean, Some(1.0));
    }

    #[test]
    fn null_calibration_both_policies() {
        let model = PromptTypeModel::uniform(vec![0.0; 10]).unwrap();
        for policy in [AllocationPolicy::Proportional, AllocationPolicy::two_stage(20, 0.2).unwrap()] {
            let est = simulate_power(&model, &policy, 600, 0.05, 4000, 11).unwrap();
            let se = (0.05f64 * 0.95 / 4000.0).sqrt();
            assert!(est.power <= 0.05 + 3.0 * se, "{}: {}", policy.name(), est.power);
            assert_eq!(est.signal_mass_mean, None);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let model = concentrated();
        let p = AllocationPolicy::two_stage(30, 0.1).unwrap();
        let a = simulate_power(&model, &p, 1200, 0.05, 300, 42).unwrap();
        let b = simulate_power(&model, &p, 1200, 0.05, 300, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn power_grows_with_budget() {
        let model = PromptTypeModel::uniform(vec![0.05; 10]).unwrap();
        let mut last = 0.0;
        for budget in [200, 800, 2000] {
            let p = simulate_power(&model, &AllocationPolicy::Proportional, budget, 0.05, 2000, 3).unwrap().power;
            assert!(p > last - 0.02, "{budget}: {p} after {last}");
            last = p;
        }
        assert!(last > 0.8);
    }

    #[test]
    fn screening_success_improves_with_b() {
        let model = PromptTypeModel::uniform({
            let mut d = vec![0.0; 10];
            d[3] = 0.2;
            d
        })
        .unwrap();
        let hit_rate = |b: u64| {
            let est = simulate_power(&model, &AllocationPolicy::two_stage(b, 0.1).unwrap(), 10 * b + 100, 0.05, 2000, 17).unwrap();
            est.jaccard_mean.unwrap()
        };
        let rates: Vec<f64> = [5, 20, 200].into_iter().map(hit_rate).collect();
        assert!(rates[0] < rates[1] && rates[1] <= rates[2], "{rates:?}");
        assert!(rates[2] > 0.98);
        // miss probability decays roughly exponentially: fit c1 from the two larger b
        let c1 = ((1.0 - rates[1]).max(1e-4) / (1.0 - rates[2]).max(1e-4)).ln() / 180.0;
        assert!(c1 > 0.0);
    }

    #[test]
    fn diagnostics_match_enumeration() {
        let model = PromptTypeModel::new(vec![0.4, 0.3, 0.2, 0.1], vec![0.1, -0.2, 0.0, 0.25]).unwrap();
        let outcome = TrialOutcome {
            counts: vec![40, 30, 20, 10],
            stage1_counts: vec![10; 4],
            selected: vec![1],
            delta_hat: vec![0.1, -0.3, 0.05, 0.2],
            tested_n: 60,
            successes: 40,
            reject: true,
            spillover: 0,
        };
        let d = diagnostics(&model, 0.25, &outcome).unwrap();
        // w delta^2: 0.004, 0.012, 0, 0.00625 -> total 0.02225, oracle {1}
        assert!((d.mu2 - 0.02225).abs() < 1e-12);
        // top by delta^2 is type 3 alone
        assert!((d.mu2_q - 0.0625).abs() < 1e-12);
        assert!((d.lambda_pi - 100.0).abs() < 1e-9);
        assert_eq!(d.jaccard, Some(1.0));
        assert!((d.signal_mass.unwrap() - 0.012 / 0.02225).abs() < 1e-12);
        // delta_hat^2: 0.01, 0.09, 0.0025, 0.04 -> top 0.09 of 0.1425
        assert!((d.kappa_stat.unwrap() - 0.09 / (0.25 * 0.1425)).abs() < 1e-12);
        assert!((d.error_floor - 0.5 * (-0.02225f64 * 100.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn oracle_and_screening_rankings_differ() {
        let model = PromptTypeModel::new(vec![0.9, 0.1], vec![0.1, 0.2]).unwrap();
        assert_eq!(model.oracle_set(0.5), vec![0]);
        assert!((model.mu2_q(0.5) - 0.04).abs() < 1e-12);
    }

    fn pool_dataset(types: &[(&str, u64, u64)]) -> Dataset {
        let mut recs = Vec::new();
        for (ty, ones, zeros) in types {
            for j in 0..(ones + zeros) {
                let o = if j < *ones { Outcome::BWins } else { Outcome::AWins };
                recs.push(JudgmentRecord::new("a", "b", format!("{ty}-{j}"), o).with_prompt_type(*ty));
            }
        }
        Dataset::from_records(recs).unwrap()
    }

    #[test]
    fn replay_respects_pool_limits() {
        let ds = pool_dataset(&[("x", 30, 30), ("y", 40, 20)]);
        let pair = PairKey::new("a", "b").unwrap();
        let opts = ReplayOptions { trials: 20, ..ReplayOptions::new(1) };
        assert!(matches!(
            offline_replay(&ds, &pair, &AllocationPolicy::Proportional, 121, &opts),
            Err(Error::Infeasible(_))
        ));
        // drawing the whole pool is deterministic
        let full = offline_replay(&ds, &pair, &AllocationPolicy::Proportional, 120, &opts).unwrap();
        let expected = exact_binomial_test(70, 120, 0.5).unwrap() < 0.05;
        assert_eq!(full.power, if expected { 1.0 } else { 0.0 });
    }

    #[test]
    fn replay_exhaustion_spills_or_fails() {
        // retained type "y" holds 25 judgments; the second stage needs 80
        let pool = JudgmentPool::new(vec!["x".into(), "y".into()], vec![30, 25], vec![55, 0]).unwrap();
        let policy = AllocationPolicy::two_stage(10, 0.5).unwrap();
        let mut opts = ReplayOptions { trials: 10, ..ReplayOptions::new(2) };
        let est = replay_pool(&pool, &policy, 100, &opts).unwrap();
        assert_eq!(est.spillover_trials, 10);
        opts.strict = true;
        assert!(matches!(replay_pool(&pool, &policy, 100, &opts), Err(Error::Infeasible(_))));
    }

    #[test]
    fn replay_matches_model_for_a_single_type() {
        let delta = 0.1;
        let n = 20_000u64;
        let ones = (n as f64 * (0.5 + delta)) as u64;
        let pool = JudgmentPool::new(vec!["all".into()], vec![ones], vec![n - ones]).unwrap();
        let model = PromptTypeModel::uniform(vec![delta]).unwrap();
        let opts = ReplayOptions { trials: 2000, ..ReplayOptions::new(4) };
        let r = replay_pool(&pool, &AllocationPolicy::Proportional, 250, &opts).unwrap();
        let s = simulate_power(&model, &AllocationPolicy::Proportional, 250, 0.05, 2000, 4).unwrap();
        assert!((r.power - s.power).abs() < 0.05, "{} vs {}", r.power, s.power);
    }

    proptest! {
        #[test]
        fn proportional_conserves_and_stays_close(
            raw in proptest::collection::vec(0.01f64..1.0, 1..30),
            budget in 0u64..5000,
        ) {
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let n = proportional_allocate(&w, budget);
            prop_assert_eq!(n.iter().sum::<u64>(), budget);
            for (ni, wi) in n.iter().zip(&w) {
                prop_assert!((*ni as f64 - budget as f64 * wi).abs() < 1.0 + 1e-9);
            }
            // oracle: floor everything, then hand out leftovers by descending remainder
            let exact: Vec<f64> = w.iter().map(|wi| budget as f64 * wi).collect();
            let mut oracle: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
            let mut rem: Vec<(f64, usize)> = exact.iter().enumerate().map(|(i, e)| (e - e.floor(), i)).collect();
            rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let left = budget - oracle.iter().sum::<u64>();
            for &(_, i) in rem.iter().take(left as usize) {
                oracle[i] += 1;
            }
            prop_assert_eq!(n, oracle);
        }

        #[test]
        fn bottleneck_is_the_min_ratio(
            pairs in proptest::collection::vec((0u64..500, 0.01f64..1.0), 1..20),
        ) {
            let counts: Vec<u64> = pairs.iter().map(|p| p.0).collect();
            let w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let lam = allocation_bottleneck(&counts, &w).unwrap();
            let mut brute = f64::INFINITY;
            for i in 0..counts.len() {
                brute = brute.min(counts[i] as f64 / w[i]);
            }
            prop_assert_eq!(lam, brute);
        }

        #[test]
        fn proportional_maximizes_bottleneck(
            raw in proptest::collection::vec(0.05f64..1.0, 2..10),
            budget in 50u64..2000,
            seed in any::<u64>(),
        ) {
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let best = allocation_bottleneck(&proportional_allocate(&w, budget), &w).unwrap();
            let mut rng = rng::stream(seed, &[]);
            let slack = w.iter().map(|wi| 1.0 / wi).fold(0.0, f64::max);
            for _ in 0..50 {
                let mut counts = vec![0u64; w.len()];
                for _ in 0..budget {
                    counts[rng.random_range(0..w.len())] += 1;
                }
                let lam = allocation_bottleneck(&counts, &w).unwrap();
                prop_assert!(lam <= best + slack, "{} > {}", lam, best);
            }
        }

        #[test]
        fn realized_counts_sum_to_budget(
            m in 1usize..12,
            extra in 1u64..400,
            b in 1u64..20,
            q in 0.05f64..1.0,
            seed in any::<u64>(),
        ) {
            let model = PromptTypeModel::uniform(vec![0.1; m]).unwrap();
            let budget = b * m as u64 + extra;
            for policy in [AllocationPolicy::Proportional, AllocationPolicy::two_stage(b, q).unwrap()] {
                let o = run_once(&model, &policy, budget, 0.05, seed).unwrap();
                prop_assert_eq!(o.total(), budget);
            }
        }

        #[test]
        fn capped_allocation_respects_caps(
            cells in proptest::collection::vec((0.01f64..1.0, 0u64..100), 1..10),
            budget in 0u64..600,
        ) {
            let w: Vec<f64> = cells.iter().map(|s| s.0).collect();
            let caps: Vec<u64> = cells.iter().map(|s| s.1).collect();
            match capped_allocate(&w, &caps, budget) {
                None => prop_assert!(caps.iter().sum::<u64>() < budget),
                Some(c) => {
                    prop_assert_eq!(c.iter().sum::<u64>(), budget);
                    for (ci, cap) in c.iter().zip(&caps) {
                        prop_assert!(ci <= cap);
                    }
                }
            }
        }
    }
}
