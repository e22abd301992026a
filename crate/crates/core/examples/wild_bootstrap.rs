//! Wild bootstrap with Rademacher weights under subject-specific variances.

use ancova_mctp::bootstrap::{bootstrap_distribution, critical_value, mctp_boot, p_value, BootstrapSettings};
use ancova_mctp::design::{build_design, contrast, ContrastKind};
use ancova_mctp::estimation::{fit, VarianceMode};
use ancova_mctp::inference::MctpOptions;
use ancova_mctp::simulation::{generate, ErrorLaw, SampleSizes, SimSetting, VarianceStructure};

fn main() -> ancova_mctp::Result<()> {
    let setting = SimSetting::new(
        3,
        SampleSizes::Explicit { sizes: vec![10, 13, 17] },
        VarianceStructure::Complete { low: 0.5, high: 4.0 },
        ErrorLaw::Exp1,
        ContrastKind::GrandMean,
    );
    let design = build_design(&generate(&setting, 7)?)?;
    let c = contrast(ContrastKind::GrandMean, 3)?;

    let settings = BootstrapSettings::new(5000, 11)?;
    let sample = bootstrap_distribution(&design, &c, &settings)?;
    let sorted = sample.sorted();
    println!("{} replicates, {} degenerate", sorted.len(), sample.degenerate);
    for alpha in [0.1, 0.05, 0.01] {
        println!("  critical value at alpha {alpha}: {:.4}", critical_value(&sorted, alpha));
    }
    println!("  p-value of T0 = 2.5: {:.4}", p_value(&sorted, 2.5));

    let fitted = fit(&design, VarianceMode::SubjectWise)?;
    let opts = MctpOptions { boot: settings, ..MctpOptions::default() };
    let r = mctp_boot(&fitted, &design, &c, &opts)?;
    println!("\ncontrast  effect  CI  p");
    for l in 0..r.contrasts.len() {
        println!("  {:<10} {:>8.4}  [{:.4}, {:.4}]  {:.4}", r.contrasts[l], r.effects[l], r.ci[l].lower, r.ci[l].upper, r.p_adj[l]);
    }
    println!("global: max |T| = {:.4}, p = {:.4}", r.global_stat, r.global_p);
    Ok(())
}
