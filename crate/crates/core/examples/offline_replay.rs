//! Replaying allocation policies against a collected pool of judgments,
//! drawing without replacement within each prompt type.

use prefdetect::allocation::{offline_replay, AllocationPolicy, ReplayOptions};
use prefdetect::data::{Dataset, JudgmentRecord, Outcome, PairKey};
use prefdetect::rng;
use rand::Rng;

fn main() -> prefdetect::Result<()> {
    let types = ["code", "math", "chat", "writing", "reasoning", "translation", "summary", "qa"];
    let mut g = rng::stream(3, &[]);
    let mut records = Vec::new();
    for i in 0..6000 {
        let t = i % types.len();
        // the tuned model is only better at code
        let p = if t == 0 { 0.7 } else { 0.5 };
        let outcome = if g.random::<f64>() < p { Outcome::BWins } else { Outcome::AWins };
        records.push(JudgmentRecord::new("base", "tuned", format!("p{i}"), outcome).with_prompt_type(types[t]));
    }
    let ds = Dataset::from_records(records)?;
    let pair = PairKey::new("base", "tuned")?;
    let mut opts = ReplayOptions::new(9);
    opts.trials = 400;
    let two_stage = AllocationPolicy::two_stage(25, 0.125)?;
    for budget in [400, 800, 1600] {
        let prop = offline_replay(&ds, &pair, &AllocationPolicy::Proportional, budget, &opts)?;
        let ts = offline_replay(&ds, &pair, &two_stage, budget, &opts)?;
        println!(
            "B = {budget:>5}: proportional {:.3}, two-stage {:.3} ({} trials spilled over)",
            prop.power, ts.power, ts.spillover_trials
        );
    }
    Ok(())
}
