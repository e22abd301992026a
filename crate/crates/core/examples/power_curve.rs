//! Power over a grid of shifts, homoscedastic against completely heteroscedastic errors.

use ancova_mctp::design::ContrastKind;
use ancova_mctp::inference::{DfRule, Method};
use ancova_mctp::simulation::{power_study, Alternative, ErrorLaw, SampleSizes, SimSetting, VarianceStructure};

fn main() -> ancova_mctp::Result<()> {
    let deltas: Vec<f64> = (0..=5).map(|k| 0.4 * k as f64).collect();
    let methods = [Method::Mvt(DfRule::Min), Method::Bootstrap];
    for variance in [VarianceStructure::Homoscedastic, VarianceStructure::Complete { low: 0.5, high: 4.0 }] {
        let mut s = SimSetting::new(3, SampleSizes::Balanced { base: 8, increment: 0 }, variance, ErrorLaw::Normal, ContrastKind::Dunnett);
        s.alternative = Alternative::Alt1;
        s.n_sim = 300;
        s.n_boot = 300;
        let curve = power_study(&s, &methods, &deltas)?;
        println!("{}", curve.label);
        for (delta, point) in curve.deltas.iter().zip(&curve.points) {
            let rates: Vec<String> =
                point.methods.iter().map(|m| format!("{} {:.3}", m.method, m.rate.unwrap_or(f64::NAN))).collect();
            println!("  delta {delta:.1}: {}", rates.join(", "));
        }
    }
    Ok(())
}
