//! Many-to-one comparisons with compatible simultaneous confidence intervals.

use ancova_mctp::design::{build_design, contrast, ContrastKind};
use ancova_mctp::estimation::{fit, VarianceMode};
use ancova_mctp::inference::{mctp, DfRule, MctpOptions, Method};
use ancova_mctp::mvtdist::Sidedness;
use ancova_mctp::simulation::{generate, ErrorLaw, Pairing, SampleSizes, SimSetting, VarianceStructure};

fn main() -> ancova_mctp::Result<()> {
    let mut setting = SimSetting::new(
        4,
        SampleSizes::Unbalanced { pairing: Pairing::Np, increment: 4 },
        VarianceStructure::GroupWise { sigma1: 4.0, sigmas: None },
        ErrorLaw::Normal,
        ContrastKind::Dunnett,
    );
    setting.shift_pattern = Some(vec![0.0, 0.0, 1.0, 2.0]);
    setting.delta = 1.0;
    let data = generate(&setting, 42)?;
    let design = build_design(&data)?;
    let c = contrast(ContrastKind::Dunnett, 4)?.with_cell_labels(&design.cell_labels())?;
    let fitted = fit(&design, VarianceMode::GroupWise)?;

    for sidedness in [Sidedness::TwoSided, Sidedness::Upper] {
        let opts = MctpOptions { sidedness, ..MctpOptions::default() };
        for method in [Method::Mvt(DfRule::Min), Method::Mvt(DfRule::Max), Method::Normal] {
            let r = mctp(&fitted, &c, &design, method, &opts)?;
            println!("{method} ({sidedness:?}), df {:?}, crit {:.4}", r.df_used.map(|d| d.to_string()), r.crit);
            for l in 0..r.contrasts.len() {
                println!(
                    "  {:<8} {:>8.4}  [{:>8.4}, {:>8.4}]  T = {:>7.3}  p = {:.4}{}",
                    r.contrasts[l],
                    r.effects[l],
                    r.ci[l].lower,
                    r.ci[l].upper,
                    r.statistics[l],
                    r.p_adj[l],
                    if r.reject[l] { " *" } else { "" }
                );
            }
        }
    }
    Ok(())
}
