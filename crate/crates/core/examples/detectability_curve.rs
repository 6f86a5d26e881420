//! Monte-Carlo power of the exact binomial test as the number of sampled
//! judgments grows, for a clear and a near-tied pair.

use prefdetect::data::{PairAggregate, PairKey};
use prefdetect::detect::{detectability_curve, CurveOptions};

fn main() -> prefdetect::Result<()> {
    let pairs = [
        PairAggregate::from_counts(PairKey::new("base", "tuned")?, 400, 600, 80),
        PairAggregate::from_counts(PairKey::new("v1", "v2")?, 480, 520, 120),
    ];
    let grid = [50, 100, 200, 400, 800, 1600];
    let mut opts = CurveOptions::new(42);
    opts.trials = 1000;
    for agg in &pairs {
        let curve = detectability_curve(agg, &grid, &opts)?;
        println!("{} (p_hat {:.3})", curve.pair, curve.p_hat);
        for ((n, p), se) in curve.n_grid.iter().zip(&curve.power).zip(curve.standard_errors()) {
            println!("  n = {n:>5}: power {p:.3} +/- {se:.3}");
        }
    }
    Ok(())
}
