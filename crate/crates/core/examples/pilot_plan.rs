//! Feasibility verdicts for three pilots against the same budget, plus
//! allocation advice.

use prefdetect::data::{PairAggregate, PairKey};
use prefdetect::planner::{allocation_advice, pilot_assess, LOW_SIGNAL_THRESHOLD};
use prefdetect::stats::TestConfig;

fn main() -> prefdetect::Result<()> {
    let cfg = TestConfig::default();
    let budget = 500;
    for (second, first) in [(40, 10), (28, 22), (26, 24)] {
        let pilot = PairAggregate::from_counts(PairKey::new("a", "b")?, first, second, 0);
        let report = pilot_assess(&pilot, &cfg, budget, LOW_SIGNAL_THRESHOLD)?;
        println!("{}", report.render_text());
    }
    for (kappa, b) in [(2.4, 5000), (1.1, 5000), (2.4, 300)] {
        let advice = allocation_advice(kappa, b, 20, 30);
        println!("kappa {kappa}, B = {b}: {:?} ({})", advice.choice, advice.reason);
    }
    Ok(())
}
