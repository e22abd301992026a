//! Two groups without covariates: the group-wise test statistic is Welch's t.

use ancova_mctp::design::{build_design, contrast, AncovaDataset, ContrastKind};
use ancova_mctp::estimation::{fit, VarianceMode};
use ancova_mctp::inference::{box_dfs, mctp, select_df, test_statistics, DfRule, MctpOptions, Method};
use nalgebra::DMatrix;

fn main() -> ancova_mctp::Result<()> {
    let a = [5.1, 4.8, 6.0, 5.5, 5.9];
    let b = [7.9, 3.2, 9.4, 6.1, 8.8, 4.0, 10.3];
    let y: Vec<f64> = a.iter().chain(&b).cloned().collect();
    let labels: Vec<&str> = std::iter::repeat_n("a", a.len()).chain(std::iter::repeat_n("b", b.len())).collect();
    let data = AncovaDataset::one_way(y, &labels, DMatrix::zeros(a.len() + b.len(), 0))?;
    let design = build_design(&data)?;
    let fitted = fit(&design, VarianceMode::GroupWise)?;
    let c = contrast(ContrastKind::Dunnett, 2)?;

    let (effect, se, t) = test_statistics(&fitted, &c)?;
    let nu = box_dfs(&fitted, &c, &design)?;
    println!("b - a = {:.4}, se {:.4}, t = {:.4}, Satterthwaite df = {:.4}", effect[0], se[0], t[0], nu[0]);
    println!("df used (rounded): {}", select_df(DfRule::Min, &nu));

    let res = mctp(&fitted, &c, &design, Method::Mvt(DfRule::Min), &MctpOptions::default())?;
    println!("two-sided p = {:.5}, 95% CI [{:.4}, {:.4}]", res.p_adj[0], res.ci[0].lower, res.ci[0].upper);
    Ok(())
}
