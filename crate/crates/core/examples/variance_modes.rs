//! Fit one dataset under the three variance models and compare the covariance of the cell effects.

use ancova_mctp::design::{build_design, AncovaDataset};
use ancova_mctp::estimation::{fit, subject_variances, VarianceMode};
use nalgebra::DMatrix;

fn main() -> ancova_mctp::Result<()> {
    // Three groups with very different spreads and one covariate.
    let y = [
        10.2, 11.5, 9.8, 10.9, 12.0, 10.4, //
        13.1, 14.0, 12.2, 15.3, 11.7, 13.8, 14.6, //
        9.0, 21.5, 3.2, 16.8, 1.1, 12.4,
    ];
    let x = [
        1.2, 2.0, 0.8, 1.5, 2.4, 1.1, //
        1.9, 2.2, 1.0, 2.8, 0.7, 1.6, 2.5, //
        1.3, 2.9, 0.4, 2.1, 0.2, 1.8,
    ];
    let labels: Vec<&str> = std::iter::repeat_n("A", 6).chain(std::iter::repeat_n("B", 7)).chain(std::iter::repeat_n("C", 6)).collect();
    let data = AncovaDataset::one_way(y.to_vec(), &labels, DMatrix::from_column_slice(19, 1, &x))?;
    let design = build_design(&data)?;
    println!("leverages sum to {:.6} (= cells + covariates)", design.leverages().sum());

    for mode in [VarianceMode::Homoscedastic, VarianceMode::GroupWise, VarianceMode::SubjectWise] {
        let f = fit(&design, mode)?;
        println!("\n{mode}");
        println!("  adjusted means  {:.4?}", f.b_hat.as_slice());
        println!("  slope           {:.4}", f.p_hat[0]);
        let se: Vec<String> = (0..3).map(|i| format!("{:.4}", f.psi[(i, i)].sqrt())).collect();
        println!("  standard errors {}", se.join("  "));
        if let Some(g) = &f.group {
            println!("  cell variances  {:.4?} on {:?} df", g.sigma2, g.dfs);
        }
        if let Some(s2) = f.pooled_sigma2 {
            println!("  pooled variance {s2:.4} on {} df", f.residual_df());
        }
    }

    let e2 = subject_variances(&design);
    println!("\nlargest squared residual {:.3}", e2.iter().cloned().fold(0.0, f64::max));
    Ok(())
}
