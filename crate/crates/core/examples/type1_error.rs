//! Empirical level of the global test for a small grid of settings.

use ancova_mctp::design::ContrastKind;
use ancova_mctp::inference::{DfRule, Method};
use ancova_mctp::simulation::{type1_study, ErrorLaw, Pairing, SampleSizes, SimSetting, VarianceStructure};

fn main() -> ancova_mctp::Result<()> {
    let n_sim = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let methods = [Method::Mvt(DfRule::Min), Method::Mvt(DfRule::Max), Method::Normal, Method::Bootstrap];
    let settings = [
        (SampleSizes::Balanced { base: 8, increment: 0 }, VarianceStructure::Homoscedastic),
        (SampleSizes::Unbalanced { pairing: Pairing::Np, increment: 0 }, VarianceStructure::GroupWise { sigma1: 4.0, sigmas: None }),
        (SampleSizes::Unbalanced { pairing: Pairing::Pp, increment: 0 }, VarianceStructure::GroupWise { sigma1: 4.0, sigmas: None }),
        (SampleSizes::Balanced { base: 8, increment: 5 }, VarianceStructure::Complete { low: 0.5, high: 4.0 }),
    ];
    for (sizes, variance) in settings {
        let mut s = SimSetting::new(3, sizes, variance, ErrorLaw::Normal, ContrastKind::Tukey);
        s.n_sim = n_sim;
        s.n_boot = 500;
        let report = type1_study(&s, &methods)?;
        println!("{} (n = {:?})", report.label, report.sizes);
        for m in &report.methods {
            println!(
                "  {:<9} {:.4}  [{:.4}, {:.4}]  failures {}",
                m.method.to_string(),
                m.rate.unwrap_or(f64::NAN),
                m.ci_lower.unwrap_or(f64::NAN),
                m.ci_upper.unwrap_or(f64::NAN),
                m.failures
            );
        }
    }
    Ok(())
}
