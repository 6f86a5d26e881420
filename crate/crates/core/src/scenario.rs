//! Synthetic allocation scenarios read from TOML documents.
//!
//! ```toml
//! m = 20
//! deltas = [0.25, 0.0, ...]
//! budgets = [1200, 2000, 4000]
//! policy = "both"        # "proportional" | "two_stage" | "both"
//! b = 50
//! q = 0.1
//! alpha = 0.05
//! trials = 2000
//! seed = 7
//! ```
//!
//! `weights` defaults to uniform; `b` to `ceil(10 ln m)` and `q` to 0.2.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::allocation::{default_screening_budget, simulate_power, AllocationPolicy, PowerEstimate, PromptTypeModel};
use crate::error::{Error, Result};

const KEYS: [&str; 10] = ["m", "weights", "deltas", "budgets", "policy", "b", "q", "alpha", "trials", "seed"];
const REQUIRED: [&str; 3] = ["m", "deltas", "budgets"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySelection {
    Proportional,
    TwoStage,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub m: usize,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub deltas: Vec<f64>,
    pub budgets: Vec<u64>,
    #[serde(default)]
    pub policy: PolicySelection,
    #[serde(default)]
    pub b: Option<u64>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_trials() -> usize {
    2000
}

impl Scenario {
    /// Parses and validates a scenario, naming every unknown or missing key.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Format(format!("scenario: {e}")))?;
        let unknown: Vec<&str> = table.keys().map(String::as_str).filter(|k| !KEYS.contains(k)).collect();
        let present: BTreeSet<&str> = table.keys().map(String::as_str).collect();
        let missing: Vec<&str> = REQUIRED.iter().copied().filter(|k| !present.contains(k)).collect();
        if !unknown.is_empty() || !missing.is_empty() {
            let mut parts = Vec::new();
            if !unknown.is_empty() {
                parts.push(format!("unknown keys: {}", unknown.join(", ")));
            }
            if !missing.is_empty() {
                parts.push(format!("missing keys: {}", missing.join(", ")));
            }
            return Err(Error::Format(format!("scenario: {}", parts.join("; "))));
        }
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Format(format!("scenario: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::Format(format!("scenario: {key}: {why}")));
        if self.m == 0 {
            return bad("m", "must be at least 1".into());
        }
        if self.deltas.len() != self.m {
            return bad("deltas", format!("has {} entries, expected m = {}", self.deltas.len(), self.m));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.m {
                return bad("weights", format!("has {} entries, expected m = {}", w.len(), self.m));
            }
        }
        if self.budgets.is_empty() {
            return bad("budgets", "must list at least one budget".into());
        }
        if self.trials == 0 {
            return bad("trials", "must be positive".into());
        }
        self.model().map_err(|e| Error::Format(format!("scenario: {e}")))?;
        for p in self.policies() {
            for &budget in &self.budgets {
                p.check_budget(self.m, budget).map_err(|e| Error::Format(format!("scenario: budgets: {e}")))?;
            }
        }
        if let Some(q) = self.q {
            AllocationPolicy::two_stage(1, q).map_err(|e| Error::Format(format!("scenario: q: {e}")))?;
        }
        if self.b == Some(0) {
            return bad("b", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn model(&self) -> Result<PromptTypeModel> {
        match &self.weights {
            Some(w) => PromptTypeModel::new(w.clone(), self.deltas.clone()),
            None => PromptTypeModel::uniform(self.deltas.clone()),
        }
    }

    pub fn two_stage_policy(&self) -> AllocationPolicy {
        AllocationPolicy::TwoStage {
            b: self.b.unwrap_or_else(|| default_screening_budget(self.m)),
            q: self.q.unwrap_or(0.2),
        }
    }

    pub fn policies(&self) -> Vec<AllocationPolicy> {
        match self.policy {
            PolicySelection::Proportional => vec![AllocationPolicy::Proportional],
            PolicySelection::TwoStage => vec![self.two_stage_policy()],
            PolicySelection::Both => vec![AllocationPolicy::Proportional, self.two_stage_policy()],
        }
    }

    /// Every budget under every selected policy, in budget-major order.
    pub fn run(&self, seed: u64) -> Result<Vec<PowerEstimate>> {
        let model = self.model()?;
        let mut rows = Vec::new();
        for &budget in &self.budgets {
            for policy in self.policies() {
                rows.push(simulate_power(&model, &policy, budget, self.alpha, self.trials, seed)?);
            }
        }
        Ok(rows)
    }
}

fn opt6(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `B,policy,power,jaccard_mean,signal_mass_mean`; undefined means are
/// left empty.
pub fn write_power_csv<W: Write>(rows: &[PowerEstimate], mut out: W) -> Result<()> {
    writeln!(out, "B,policy,power,jaccard_mean,signal_mass_mean")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{},{}",
            r.budget,
            r.policy.name(),
            r.power,
            opt6(r.jaccard_mean),
            opt6(r.signal_mass_mean)
        )?;
    }
    Ok(())
}
