//! Multivariate t rectangle probabilities and equicoordinate quantiles.

use ancova_mctp::mvtdist::{adj_pvalues, equi_quantile, rect_prob, CorrelationMatrix, Df, QmcSettings, QuantileRequest};
use nalgebra::DMatrix;

fn main() -> ancova_mctp::Result<()> {
    // Correlation of three many-to-one comparisons with equal group sizes.
    let r = CorrelationMatrix::new(DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.5 }))?;
    let qmc = QmcSettings::default();

    for c in [1.5, 2.0, 2.5, 3.0] {
        let p = rect_prob(c, Df::Finite(20), &r, &qmc)?;
        println!("P(max |T| <= {c}) = {:.5} +/- {:.1e}", p.value, p.std_error);
    }

    for df in [Df::Finite(5), Df::Finite(20), Df::Infinite] {
        let q = equi_quantile(&QuantileRequest::new(0.95, df, r.clone()))?;
        println!("95% equicoordinate quantile, df {df}: {:.4} (attained {:.5})", q.value, q.attained.value);
    }

    let p = adj_pvalues(&[0.4, 2.1, -2.7], Df::Finite(20), &r, &qmc)?;
    println!("adjusted p-values: {p:.4?}");
    Ok(())
}
