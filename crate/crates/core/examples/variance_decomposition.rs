//! Between- and within-prompt variance of win rates, and the cluster-robust
//! variance ratio, for a protocol that repeats prompts and one that does
//! not.

use prefdetect::data::{Dataset, JudgmentRecord, Outcome};
use prefdetect::dependence::{cluster_robust_ratios, compare_protocols, decompose_all};
use prefdetect::rng;
use rand::Rng;

/// `repeats` judgments per prompt; each prompt has its own win rate.
fn protocol(seed: u64, prompts: usize, repeats: usize, spread: f64) -> Dataset {
    let mut g = rng::stream(seed, &[]);
    let mut records = Vec::new();
    for pair in [("a", "b"), ("a", "c"), ("b", "c")] {
        for p in 0..prompts {
            let rate = 0.55 + spread * (g.random::<f64>() - 0.5);
            for _ in 0..repeats {
                let outcome = if g.random::<f64>() < rate { Outcome::BWins } else { Outcome::AWins };
                records.push(JudgmentRecord::new(pair.0, pair.1, format!("q{p}"), outcome));
            }
        }
    }
    Dataset::from_records(records).expect("non-empty")
}

fn main() -> prefdetect::Result<()> {
    let curated = protocol(1, 200, 4, 0.8);
    let crowd = protocol(2, 800, 1, 0.2);
    let a = decompose_all(&curated, 2);
    let b = decompose_all(&crowd, 2);
    for d in &a {
        println!("{}: between {:.4}, within {:.4} over {} prompts", d.pair, d.between_prompt, d.within_prompt, d.prompts);
    }
    let cmp = compare_protocols(&a, &b)?;
    println!("median between-prompt variance: {:.4} vs {:.4}", cmp.median_between_a, cmp.median_between_b);
    for (pair, r) in cluster_robust_ratios(&curated, 1) {
        println!("{pair}: cluster-robust / classical = {r:.2}");
    }
    for (pair, r) in cluster_robust_ratios(&crowd, 1) {
        println!("{pair} (one judgment per prompt): {r:.2}");
    }
    Ok(())
}
