//! Decisive judgments needed to detect a range of margins, at two
//! significance levels, with the closed-form power curve for one of them.

use prefdetect::stats::{budget_constant, closed_form_power, required_sample_size, TestConfig};

fn main() -> prefdetect::Result<()> {
    let standard = TestConfig::default();
    let strict = TestConfig::new(0.01, 0.9)?;
    println!("budget constant (alpha 0.05, power 0.9): {:.6}", budget_constant(&standard));
    println!("{:>6} {:>10} {:>10}", "delta", "alpha=.05", "alpha=.01");
    for delta in [0.02, 0.03, 0.05, 0.06, 0.10, 0.20] {
        println!(
            "{delta:>6.2} {:>10} {:>10}",
            required_sample_size(delta, &standard)?,
            required_sample_size(delta, &strict)?
        );
    }
    println!("\npower at delta = 0.05:");
    for n in [250, 500, 1051, 2000] {
        println!("  n = {n:>5}: {:.3}", closed_form_power(0.05, n, 0.05)?);
    }
    Ok(())
}
