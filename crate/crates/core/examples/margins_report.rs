//! Margin quantiles, the near-tie subset and a bootstrap interval for a
//! synthetic leaderboard of ten models.

use prefdetect::data::{Dataset, JudgmentRecord, Outcome, TiePolicy};
use prefdetect::margins::{
    bootstrap_quantile_ci, near_tie_filter, qualifying_margins, render_near_tie_text, render_quantiles_text,
    tail_quantiles,
};
use prefdetect::rng;
use rand::Rng;

fn leaderboard(seed: u64) -> Dataset {
    let mut g = rng::stream(seed, &[]);
    let strength: Vec<f64> = (0..10).map(|i| 0.03 * f64::from(i)).collect();
    let mut records = Vec::new();
    for i in 0..40_000u32 {
        let a = g.random_range(0..10);
        let b = (a + g.random_range(1..10)) % 10;
        let p = 0.5 + (strength[b] - strength[a]) / 2.0;
        let u: f64 = g.random();
        let outcome = if u < 0.15 {
            Outcome::Tie
        } else if g.random::<f64>() < p {
            Outcome::BWins
        } else {
            Outcome::AWins
        };
        records.push(JudgmentRecord::new(format!("model-{a}"), format!("model-{b}"), format!("p{i}"), outcome));
    }
    Dataset::from_records(records).expect("non-empty")
}

fn main() -> prefdetect::Result<()> {
    let ds = leaderboard(11);
    let margins = qualifying_margins(&ds, TiePolicy::Drop, 200)?;
    println!("{} well-sampled pairs\n", margins.len());
    print!("{}", render_quantiles_text(&tail_quantiles(&margins, &[0.1, 0.25, 0.5])?));
    println!();
    print!("{}", render_near_tie_text(&near_tie_filter(&margins, 0.10)?));

    let abs: Vec<f64> = margins.iter().map(|m| m.delta_hat.abs()).collect();
    let ci = bootstrap_quantile_ci(&abs, 0.1, 2000, 0.95, 5)?;
    println!("\np10 |delta| = {:.3}, 95% CI [{:.3}, {:.3}]", ci.point, ci.lower, ci.upper);
    Ok(())
}
