//! Proportional allocation against two-stage screening when the margin
//! sits in a few prompt types and when it is spread over all of them.

use prefdetect::allocation::{simulate_power, AllocationPolicy, PromptTypeModel};

fn main() -> prefdetect::Result<()> {
    let mut concentrated = vec![0.0; 20];
    concentrated[..2].fill(0.25);
    let regimes = [("concentrated", concentrated), ("diffuse", vec![0.05; 20])];
    let two_stage = AllocationPolicy::two_stage(30, 0.1)?;
    for (name, deltas) in regimes {
        let model = PromptTypeModel::uniform(deltas)?;
        println!("{name}: mu2 = {:.5}, mu2 over top 10% = {:.5}", model.mu2(), model.mu2_q(0.1));
        for budget in [1200, 2400, 4800] {
            let prop = simulate_power(&model, &AllocationPolicy::Proportional, budget, 0.05, 500, 7)?;
            let ts = simulate_power(&model, &two_stage, budget, 0.05, 500, 7)?;
            println!(
                "  B = {budget:>5}: proportional {:.3}, two-stage {:.3} (kappa {:.2}, signal mass {:.2})",
                prop.power,
                ts.power,
                ts.kappa_mean.unwrap_or(f64::NAN),
                ts.signal_mass_mean.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
