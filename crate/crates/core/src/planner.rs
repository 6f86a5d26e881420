//! Planning a comparison from a small pilot: how many judgments the
//! observed margin needs, whether the budget covers it, and which
//! allocation policy to use.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::allocation::KAPPA_THRESHOLD;
use crate::data::{estimate_margin, PairAggregate, TiePolicy};
use crate::error::{Error, Result};
use crate::stats::{closed_form_budget, required_sample_size, TestConfig};

/// Margins at or below this count as low-signal.
pub const LOW_SIGNAL_THRESHOLD: f64 = 0.05;

/// Recommended pilot size range.
pub const PILOT_RANGE: (u64, u64) = (30, 100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Feasible,
    Underpowered,
    SwitchProtocol,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Feasible => "FEASIBLE",
            Self::Underpowered => "UNDERPOWERED",
            Self::SwitchProtocol => "SWITCH_PROTOCOL",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub p_hat: f64,
    pub delta_hat: f64,
    pub n0_pilot: u64,
    /// `None` when the pilot margin is exactly zero (unbounded).
    pub required_n: Option<u64>,
    pub available_budget: u64,
    pub verdict: Verdict,
    pub narrative: String,
    pub warnings: Vec<String>,
    pub alpha: f64,
    pub power: f64,
    pub low_signal_threshold: f64,
    /// The verdict was recomputed from the reported numbers and agreed.
    pub revalidated: bool,
}

impl FeasibilityReport {
    pub fn render_text(&self) -> String {
        let required = self.required_n.map(|n| n.to_string()).unwrap_or_else(|| "unbounded".into());
        let mut out = format!(
            "pilot: {} decisive, p_hat = {:.4}, delta_hat = {:+.4}\n\
             required n (alpha {}, power {}): {}\n\
             available budget: {}\n\
             verdict: {}\n{}\n",
            self.n0_pilot,
            self.p_hat,
            self.delta_hat,
            self.alpha,
            self.power,
            required,
            self.available_budget,
            self.verdict,
            self.narrative
        );
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

fn decide(required: Option<u64>, budget: u64, low_signal: bool) -> Verdict {
    let covered = required.is_some_and(|n| n <= budget);
    match (covered, low_signal) {
        (true, _) => Verdict::Feasible,
        (false, true) => Verdict::SwitchProtocol,
        (false, false) => Verdict::Underpowered,
    }
}

/// Assesses a pilot's decisive judgments (ties dropped) against a budget.
pub fn pilot_assess(pilot: &PairAggregate, cfg: &TestConfig, budget: u64, low_signal_threshold: f64) -> Result<FeasibilityReport> {
    if pilot.decisive() == 0 {
        return Err(Error::Undefined("the pilot has no decisive judgments".into()));
    }
    if !(0.0..0.5).contains(&low_signal_threshold) {
        return Err(Error::Domain(format!("low-signal threshold must lie in [0, 0.5), got {low_signal_threshold}")));
    }
    let est = estimate_margin(pilot, TiePolicy::Drop)?;
    let n0 = pilot.decisive();
    let delta = est.delta_hat;
    if delta.abs() >= 0.5 {
        return Err(Error::Domain(format!(
            "the pilot is unanimous (p_hat = {}); no finite sample-size formula applies",
            est.p_hat
        )));
    }
    let required = match required_sample_size(delta, cfg) {
        Ok(n) => Some(n),
        Err(Error::Infeasible(_)) => None,
        Err(e) => return Err(e),
    };
    let low_signal = delta.abs() <= low_signal_threshold + 1e-12;

    let mut warnings = Vec::new();
    if n0 < PILOT_RANGE.0 || n0 > PILOT_RANGE.1 {
        warnings.push(format!(
            "pilot of {n0} decisive judgments is outside the recommended {}-{}",
            PILOT_RANGE.0, PILOT_RANGE.1
        ));
    }
    let verdict = decide(required, budget, low_signal);
    let need = required.map(|n| n.to_string()).unwrap_or_else(|| "an unbounded number of".into());
    let narrative = match verdict {
        Verdict::Feasible if low_signal => format!(
            "{need} judgments fit the budget of {budget}, but |delta_hat| <= {low_signal_threshold} leaves little margin for pilot error"
        ),
        Verdict::Feasible => format!("{need} judgments fit the budget of {budget}"),
        Verdict::Underpowered => format!(
            "needs {need} judgments but only {budget} are available; report non-detection as a budget limitation, not as evidence of parity"
        ),
        Verdict::SwitchProtocol => format!(
            "|delta_hat| <= {low_signal_threshold} needs {need} judgments against a budget of {budget}; \
             consider a curated protocol that amplifies margins; the current budget stays underpowered"
        ),
    };
    // final pass: recompute the verdict from the reported quantities
    let revalidated = decide(required, budget, delta.abs() <= low_signal_threshold + 1e-12) == verdict
        && required.is_none_or(|n| n as f64 >= closed_form_budget(delta, cfg).unwrap_or(f64::INFINITY));

    Ok(FeasibilityReport {
        p_hat: est.p_hat,
        delta_hat: delta,
        n0_pilot: n0,
        required_n: required,
        available_budget: budget,
        verdict,
        narrative,
        warnings,
        alpha: cfg.alpha(),
        power: cfg.power(),
        low_signal_threshold,
        revalidated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AllocationChoice {
    Proportional,
    TwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationAdvice {
    pub choice: AllocationChoice,
    pub reason: String,
}

/// Two-stage screening only when the budget covers screening and the
/// concentration statistic exceeds 1.5.
pub fn allocation_advice(kappa_stat: f64, budget: u64, m: usize, b: u64) -> AllocationAdvice {
    let screening = m as u64 * b;
    if budget < screening {
        return AllocationAdvice {
            choice: AllocationChoice::Proportional,
            reason: format!("small budget (B = {budget} < m*b = {screening}): screening alone would exhaust it"),
        };
    }
    if kappa_stat > KAPPA_THRESHOLD {
        AllocationAdvice {
            choice: AllocationChoice::TwoStage,
            reason: format!("concentrated signal (kappa = {kappa_stat:.3} > {KAPPA_THRESHOLD})"),
        }
    } else {
        AllocationAdvice {
            choice: AllocationChoice::Proportional,
            reason: format!("diffuse signal (kappa = {kappa_stat:.3} <= {KAPPA_THRESHOLD}); proportional is minimax-optimal"),
        }
    }
}
