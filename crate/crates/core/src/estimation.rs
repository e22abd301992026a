//! Effect estimates and sandwich covariances for the cell-means ANCOVA model.
//!
//! With generating matrices `D` and `A`, `b = D Y`, `p = A Y`, and the
//! covariances are `Psi = D Sigma D'` and `Xi = A Sigma A'`. For a diagonal
//! weight matrix `W` that is constant within cells,
//!
//! ```text
//! A = (Mc' W Mc)^{-1} Mc' W        (Mc: covariates centered within cells)
//! D = S - Mbar A                   (S: cell-mean operator, Mbar: cell covariate means)
//! ```
//!
//! which is the generalized least squares solution for block-constant `Sigma`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::DesignBundle;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// One variance per cell; feasible GLS with the unbiased per-cell estimator.
    GroupWise,
    /// One variance per subject; OLS with the HC0 sandwich covariance.
    SubjectWise,
    /// Common variance; OLS with the pooled residual variance.
    Homoscedastic,
}

impl std::fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VarianceMode::GroupWise => "groupwise",
            VarianceMode::SubjectWise => "subjectwise",
            VarianceMode::Homoscedastic => "homoscedastic",
        })
    }
}

impl std::str::FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "groupwise" | "group" => Ok(VarianceMode::GroupWise),
            "subjectwise" | "subject" | "complete" => Ok(VarianceMode::SubjectWise),
            "homoscedastic" | "homogeneous" => Ok(VarianceMode::Homoscedastic),
            other => Err(Error::Config(format!("unknown variance mode '{other}'"))),
        }
    }
}

/// Per-cell variance estimates and their residual degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupVariances {
    pub sigma2: Vec<f64>,
    pub dfs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FittedAncova {
    pub mode: VarianceMode,
    pub b_hat: DVector<f64>,
    pub p_hat: DVector<f64>,
    pub psi: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    /// Residuals `Y - X b - M p` in design order.
    pub residuals: DVector<f64>,
    /// Generating matrix for `b` (`a x N`, design order).
    pub d: DMatrix<f64>,
    /// Generating matrix for `p` (`m x N`, design order).
    pub a: DMatrix<f64>,
    /// Present in `GroupWise` mode.
    pub group: Option<GroupVariances>,
    /// Squared OLS residuals, present in `SubjectWise` mode (design order).
    pub eps2: Option<DVector<f64>>,
    /// Pooled residual variance, present in `Homoscedastic` mode.
    pub pooled_sigma2: Option<f64>,
}

impl FittedAncova {
    /// Residual degrees of freedom `N - a - m` of the full model.
    pub fn residual_df(&self) -> usize {
        self.residuals.len() - self.b_hat.len() - self.p_hat.len()
    }
}

/// Unbiased per-cell variances `Y_i' Q_i Y_i / (n_i - 1 - rank(M_i))`.
///
/// `response` is in design order. The rank is that of the covariates centered
/// within the cell, so a covariate constant in the cell costs no degree of freedom.
pub fn group_variances(design: &DesignBundle, response: &DVector<f64>) -> Result<GroupVariances> {
    let m = design.n_covariates();
    let centered = design.centered_covariates();
    let mut sigma2 = Vec::with_capacity(design.n_cells());
    let mut dfs = Vec::with_capacity(design.n_cells());
    for (i, (&s, &n)) in design.cell_starts().iter().zip(design.cell_sizes()).enumerate() {
        let y = response.rows(s, n);
        let mean = y.mean();
        let yc = y.map(|v| v - mean);
        let mc = centered.view((s, 0), (n, m)).clone_owned();
        let (rss, r) = linalg::lstsq_rss(&mc, &yc);
        let df = n as i64 - 1 - r as i64;
        if df < 1 {
            return Err(Error::InsufficientReplication { cell: design.cells()[i].to_string(), df });
        }
        sigma2.push(rss / df as f64);
        dfs.push(df as usize);
    }
    Ok(GroupVariances { sigma2, dfs })
}

/// Squared residuals of the full OLS fit of `Y` on `B`, in input row order.
pub fn subject_variances(design: &DesignBundle) -> Vec<f64> {
    let beta = design.projector() * design.response();
    let resid = ols_residuals(design, design.response(), &beta);
    design.to_input_order(&resid.map(|e| e * e))
}

pub(crate) fn ols_residuals(design: &DesignBundle, y: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let a = design.n_cells();
    let m = design.n_covariates();
    let mut resid = y.clone();
    let cov = design.covariates();
    for (i, (&s, &n)) in design.cell_starts().iter().zip(design.cell_sizes()).enumerate() {
        for k in s..s + n {
            let mut fit = beta[i];
            for c in 0..m {
                fit += cov[(k, c)] * beta[a + c];
            }
            resid[k] -= fit;
        }
    }
    resid
}

/// Generating matrices `(D, A)` for per-cell weights `w` (inverse variances).
fn generating_matrices(design: &DesignBundle, weights: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, a, m) = (design.n_obs(), design.n_cells(), design.n_covariates());
    let cells = design.row_cells();
    let mut d = DMatrix::zeros(a, n);
    for (i, (&s, &ni)) in design.cell_starts().iter().zip(design.cell_sizes()).enumerate() {
        for k in s..s + ni {
            d[(i, k)] = 1.0 / ni as f64;
        }
    }
    if m == 0 {
        return Ok((d, DMatrix::zeros(0, n)));
    }
    let mc = design.centered_covariates();
    // Mc' W
    let mtw = DMatrix::from_fn(m, n, |c, k| mc[(k, c)] * weights[cells[k]]);
    let gram = &mtw * mc;
    let inv = gram
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::RankDeficient { rank: a, expected: a + m })?;
    let amat = inv * mtw;
    d -= design.cell_covariate_means() * &amat;
    Ok((d, amat))
}

/// `G diag(v) G'` for a generating matrix `G` and per-observation variances `v`.
fn sandwich(g: &DMatrix<f64>, v: &[f64]) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(g.nrows(), g.ncols(), |r, k| g[(r, k)] * v[k]);
    let mut out = scaled * g.transpose();
    linalg::symmetrize(&mut out);
    out
}

/// Two-stage fit: estimate the error covariance from residuals, then plug it in.
pub fn fit(design: &DesignBundle, mode: VarianceMode) -> Result<FittedAncova> {
    let y = design.response();
    let n = design.n_obs();
    let a = design.n_cells();
    let m = design.n_covariates();
    let cells = design.row_cells();

    match mode {
        VarianceMode::GroupWise => {
            let gv = group_variances(design, y)?;
            let max = gv.sigma2.iter().cloned().fold(0.0_f64, f64::max);
            // Zero-variance cells get a very large finite weight.
            let floor = if max > 0.0 { max * 1e-12 } else { 1.0 };
            let weights: Vec<f64> = gv.sigma2.iter().map(|&s| 1.0 / s.max(floor)).collect();
            let (d, amat) = generating_matrices(design, &weights)?;
            let b_hat = &d * y;
            let p_hat = &amat * y;
            let obs_var: Vec<f64> = cells.iter().map(|&i| gv.sigma2[i]).collect();
            let psi = sandwich(&d, &obs_var);
            let xi = sandwich(&amat, &obs_var);
            let mut beta = DVector::zeros(a + m);
            beta.rows_mut(0, a).copy_from(&b_hat);
            beta.rows_mut(a, m).copy_from(&p_hat);
            let residuals = ols_residuals(design, y, &beta);
            Ok(FittedAncova {
                mode,
                b_hat,
                p_hat,
                psi,
                xi,
                residuals,
                d,
                a: amat,
                group: Some(gv),
                eps2: None,
                pooled_sigma2: None,
            })
        }
        VarianceMode::SubjectWise | VarianceMode::Homoscedastic => {
            let proj = design.projector();
            let beta = proj * y;
            let residuals = ols_residuals(design, y, &beta);
            let d = proj.rows(0, a).clone_owned();
            let amat = proj.rows(a, m).clone_owned();
            let b_hat = beta.rows(0, a).clone_owned();
            let p_hat = beta.rows(a, m).clone_owned();
            if mode == VarianceMode::SubjectWise {
                let eps2 = residuals.map(|e| e * e);
                let psi = sandwich(&d, eps2.as_slice());
                let xi = sandwich(&amat, eps2.as_slice());
                Ok(FittedAncova {
                    mode,
                    b_hat,
                    p_hat,
                    psi,
                    xi,
                    residuals,
                    d,
                    a: amat,
                    group: None,
                    eps2: Some(eps2),
                    pooled_sigma2: None,
                })
            } else {
                let df = n - a - m;
                if df < 1 {
                    return Err(Error::InsufficientReplication { cell: "pooled".into(), df: df as i64 });
                }
                let s2 = residuals.norm_squared() / df as f64;
                let mut psi = &d * d.transpose() * s2;
                let mut xi = &amat * amat.transpose() * s2;
                linalg::symmetrize(&mut psi);
                linalg::symmetrize(&mut xi);
                Ok(FittedAncova {
                    mode,
                    b_hat,
                    p_hat,
                    psi,
                    xi,
                    residuals,
                    d,
                    a: amat,
                    group: None,
                    eps2: None,
                    pooled_sigma2: Some(s2),
                })
            }
        }
    }
}
