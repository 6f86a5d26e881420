//! How correlated judgments inflate the nominal sample size, and where no
//! finite sample reaches the target.

use prefdetect::dependence::{effective_sample_size, icc_table, render_icc_text};

fn main() -> prefdetect::Result<()> {
    let rows = icc_table(&[26, 100, 1051], &[0.0, 0.0001, 0.001, 0.01])?;
    print!("{}", render_icc_text(&rows));
    println!("\n5000 judgments at rho = 0.001 carry {:.0} effective ones", effective_sample_size(5000.0, 0.001));
    Ok(())
}
