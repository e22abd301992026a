//! Datasets, cell-means design matrices and contrast matrices.
//!
//! Observations are grouped into cells, one per distinct tuple of factor levels.
//! Cells are ordered lexicographically by their level tuples (levels that both parse
//! as numbers compare numerically), and every matrix downstream uses that order.

mod contrast;

pub use contrast::{contrast, factorial_contrast, ContrastKind, ContrastMatrix, EffectSpec};

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Observations whose leverage reaches `1 - LEVERAGE_LIMIT` are rejected.
pub const LEVERAGE_LIMIT: f64 = 1e-8;

/// A cell identifier: one level per factor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellId(pub Vec<String>);

impl CellId {
    pub fn new<S: Into<String>>(levels: impl IntoIterator<Item = S>) -> Self {
        CellId(levels.into_iter().map(Into::into).collect())
    }

    pub fn single(level: impl Into<String>) -> Self {
        CellId(vec![level.into()])
    }

    pub fn levels(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(":"))
    }
}

/// Compare two factor levels, numerically when both parse as numbers.
pub fn level_cmp(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
            x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b))
        }
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

fn cell_cmp(a: &CellId, b: &CellId) -> Ordering {
    for (x, y) in a.0.iter().zip(&b.0) {
        match level_cmp(x, y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.0.len().cmp(&b.0.len())
}

/// Response, cell membership and covariates for `N` subjects.
#[derive(Debug, Clone)]
pub struct AncovaDataset {
    response: Vec<f64>,
    groups: Vec<CellId>,
    covariates: DMatrix<f64>,
    factor_names: Vec<String>,
    covariate_names: Vec<String>,
}

impl AncovaDataset {
    /// Validates lengths, finiteness and the cell count. `covariates` is `N x m`
    /// (use a matrix with zero columns when there are no covariates).
    pub fn new(response: Vec<f64>, groups: Vec<CellId>, covariates: DMatrix<f64>) -> Result<Self> {
        let n = response.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 observations, got {n}")));
        }
        if groups.len() != n || covariates.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "row counts differ: response {n}, groups {}, covariates {}",
                groups.len(),
                covariates.nrows()
            )));
        }
        let n_factors = groups[0].0.len();
        if n_factors == 0 || groups.iter().any(|g| g.0.len() != n_factors) {
            return Err(Error::InvalidInput(
                "every cell identifier must have the same, nonzero number of factor levels".into(),
            ));
        }
        if let Some(row) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { what: "response".into(), row });
        }
        for row in 0..n {
            if covariates.row(row).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput { what: "covariates".into(), row });
            }
        }
        let mut distinct: Vec<&CellId> = groups.iter().collect();
        distinct.sort_by(|a, b| cell_cmp(a, b));
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::InvalidGroupCount(distinct.len()));
        }
        let m = covariates.ncols();
        Ok(AncovaDataset {
            response,
            groups,
            covariates,
            factor_names: (1..=n_factors).map(|i| format!("factor{i}")).collect(),
            covariate_names: (1..=m).map(|i| format!("x{i}")).collect(),
        })
    }

    /// One-factor convenience constructor; `labels` name the cell of each subject.
    pub fn one_way<S: AsRef<str>>(response: Vec<f64>, labels: &[S], covariates: DMatrix<f64>) -> Result<Self> {
        let groups = labels.iter().map(|l| CellId::single(l.as_ref())).collect();
        Self::new(response, groups, covariates)
    }

    pub fn with_factor_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.factor_names.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} factor names, got {}",
                self.factor_names.len(),
                names.len()
            )));
        }
        self.factor_names = names;
        Ok(self)
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.covariate_names.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} covariate names, got {}",
                self.covariate_names.len(),
                names.len()
            )));
        }
        self.covariate_names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn groups(&self) -> &[CellId] {
        &self.groups
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Copy with a different response vector (same cells and covariates).
    pub fn with_response(&self, response: Vec<f64>) -> Result<Self> {
        if response.len() != self.len() {
            return Err(Error::InvalidInput("response length changed".into()));
        }
        if let Some(row) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { what: "response".into(), row });
        }
        Ok(AncovaDataset { response, ..self.clone() })
    }
}

/// The factor structure of a design whose cells form a full factorial grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorLayout {
    pub names: Vec<String>,
    pub levels: Vec<Vec<String>>,
}

impl FactorLayout {
    pub fn level_counts(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn factor_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownFactor(name.to_string()))
    }
}

/// Cell-means ANCOVA design with rows sorted so that cells are contiguous.
///
/// The model is `Y = X b + M p + e` with `X` the block design of one-vectors.
/// `proj` holds `P_B = (B'B)^{-1} B'` for `B = (X, M)`; its first `a` rows
/// are the OLS generating matrix for `b`, the remaining `m` rows the one for `p`.
#[derive(Debug, Clone)]
pub struct DesignBundle {
    cells: Vec<CellId>,
    cell_sizes: Vec<usize>,
    cell_starts: Vec<usize>,
    order: Vec<usize>,
    response: DVector<f64>,
    covariates: DMatrix<f64>,
    centered: DMatrix<f64>,
    cell_cov_means: DMatrix<f64>,
    proj: DMatrix<f64>,
    leverages: DVector<f64>,
    factor_names: Vec<String>,
    covariate_names: Vec<String>,
}

/// Sort, build `X`, `B`, `P_B` and leverages, and check rank and leverage limits.
pub fn build_design(data: &AncovaDataset) -> Result<DesignBundle> {
    let n = data.len();
    let m = data.covariates.ncols();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| cell_cmp(&data.groups[i], &data.groups[j]));

    let mut cells: Vec<CellId> = Vec::new();
    let mut cell_sizes = Vec::new();
    let mut cell_starts = Vec::new();
    for (k, &row) in order.iter().enumerate() {
        let g = &data.groups[row];
        if cells.last() != Some(g) {
            cells.push(g.clone());
            cell_starts.push(k);
            cell_sizes.push(0);
        }
        *cell_sizes.last_mut().unwrap() += 1;
    }
    let a = cells.len();
    if a < 2 {
        return Err(Error::InvalidGroupCount(a));
    }

    let response = DVector::from_iterator(n, order.iter().map(|&r| data.response[r]));
    let covariates = DMatrix::from_fn(n, m, |r, c| data.covariates[(order[r], c)]);
    let (centered, cell_cov_means) = linalg::center_blocks(&covariates, &cell_starts, &cell_sizes);

    // B = (X, M) has full column rank iff the within-cell centered covariates do.
    let r = linalg::rank(&centered);
    if r < m {
        return Err(Error::RankDeficient { rank: a + r, expected: a + m });
    }

    let (a_ols, gram_inv) = if m > 0 {
        let gram = centered.transpose() * &centered;
        let inv = gram
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::RankDeficient { rank: a + r, expected: a + m })?;
        (&inv * centered.transpose(), inv)
    } else {
        (DMatrix::zeros(0, n), DMatrix::zeros(0, 0))
    };

    // D = S - Mbar A with S the cell-mean operator.
    let mut proj = DMatrix::zeros(a + m, n);
    for i in 0..a {
        for k in cell_starts[i]..cell_starts[i] + cell_sizes[i] {
            proj[(i, k)] = 1.0 / cell_sizes[i] as f64;
        }
    }
    if m > 0 {
        let corr = &cell_cov_means * &a_ols;
        for i in 0..a {
            for k in 0..n {
                proj[(i, k)] -= corr[(i, k)];
            }
        }
        proj.view_mut((a, 0), (m, n)).copy_from(&a_ols);
    }

    let mut leverages = DVector::zeros(n);
    for i in 0..a {
        let s = cell_starts[i];
        for k in s..s + cell_sizes[i] {
            let mut h = 1.0 / cell_sizes[i] as f64;
            if m > 0 {
                let row = centered.row(k);
                h += (row * &gram_inv * row.transpose())[(0, 0)];
            }
            leverages[k] = h;
        }
    }
    if let Some(k) = leverages.iter().position(|&h| h >= 1.0 - LEVERAGE_LIMIT) {
        return Err(Error::LeverageOne { row: order[k], leverage: leverages[k] });
    }

    Ok(DesignBundle {
        cells,
        cell_sizes,
        cell_starts,
        order,
        response,
        covariates,
        centered,
        cell_cov_means,
        proj,
        leverages,
        factor_names: data.factor_names.clone(),
        covariate_names: data.covariate_names.clone(),
    })
}

impl DesignBundle {
    /// Number of cells `a`.
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Number of covariates `m`.
    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    /// Number of observations `N`.
    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn cell_labels(&self) -> Vec<String> {
        self.cells.iter().map(ToString::to_string).collect()
    }

    pub fn cell_sizes(&self) -> &[usize] {
        &self.cell_sizes
    }

    pub fn cell_starts(&self) -> &[usize] {
        &self.cell_starts
    }

    /// Column of `X` belonging to `cell`.
    pub fn cell_index(&self, cell: &CellId) -> Option<usize> {
        self.cells.binary_search_by(|c| cell_cmp(c, cell)).ok()
    }

    /// `order[k]` is the input row placed at sorted position `k`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Map a vector in sorted (design) order back to input row order.
    pub fn to_input_order(&self, v: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (k, &row) in self.order.iter().enumerate() {
            out[row] = v[k];
        }
        out
    }

    /// Response in design order.
    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    /// Covariates in design order (`N x m`).
    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    /// Covariates centered within each cell.
    pub fn centered_covariates(&self) -> &DMatrix<f64> {
        &self.centered
    }

    /// Cell means of the covariates (`a x m`).
    pub fn cell_covariate_means(&self) -> &DMatrix<f64> {
        &self.cell_cov_means
    }

    /// `P_B = (B'B)^{-1} B'`, `(a+m) x N`.
    pub fn projector(&self) -> &DMatrix<f64> {
        &self.proj
    }

    /// Diagonal of the hat matrix `B P_B`.
    pub fn leverages(&self) -> &DVector<f64> {
        &self.leverages
    }

    /// Block design matrix `X` (`N x a`).
    pub fn x_matrix(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n_obs(), self.n_cells());
        for i in 0..self.n_cells() {
            for k in self.cell_starts[i]..self.cell_starts[i] + self.cell_sizes[i] {
                x[(k, i)] = 1.0;
            }
        }
        x
    }

    /// `B = (X, M)` (`N x (a+m)`).
    pub fn b_matrix(&self) -> DMatrix<f64> {
        let (n, a, m) = (self.n_obs(), self.n_cells(), self.n_covariates());
        let mut b = DMatrix::zeros(n, a + m);
        b.view_mut((0, 0), (n, a)).copy_from(&self.x_matrix());
        b.view_mut((0, a), (n, m)).copy_from(&self.covariates);
        b
    }

    /// Cell index of each row in design order.
    pub fn row_cells(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_obs());
        for (i, &n) in self.cell_sizes.iter().enumerate() {
            out.extend(std::iter::repeat_n(i, n));
        }
        out
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Same design with a new response given in input row order.
    pub fn with_response(&self, response: &[f64]) -> Result<DesignBundle> {
        if response.len() != self.n_obs() {
            return Err(Error::InvalidInput("response length does not match design".into()));
        }
        if let Some(row) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { what: "response".into(), row });
        }
        let mut out = self.clone();
        out.response = DVector::from_iterator(self.n_obs(), self.order.iter().map(|&r| response[r]));
        Ok(out)
    }

    /// Same design with a new response already in design order.
    pub fn with_sorted_response(&self, response: DVector<f64>) -> DesignBundle {
        assert_eq!(response.len(), self.n_obs());
        let mut out = self.clone();
        out.response = response;
        out
    }

    /// Factor levels, provided the cells form the full cross of observed levels.
    pub fn factor_layout(&self) -> Result<FactorLayout> {
        let k = self.factor_names.len();
        let mut levels: Vec<Vec<String>> = vec![Vec::new(); k];
        for cell in &self.cells {
            for (f, l) in cell.0.iter().enumerate() {
                if !levels[f].contains(l) {
                    levels[f].push(l.clone());
                }
            }
        }
        for l in &mut levels {
            l.sort_by(|a, b| level_cmp(a, b));
        }
        let total: usize = levels.iter().map(Vec::len).product();
        if total != self.cells.len() {
            // Find one missing combination for the message.
            let mut idx = vec![0usize; k];
            loop {
                let cell = CellId(idx.iter().enumerate().map(|(f, &i)| levels[f][i].clone()).collect());
                if self.cell_index(&cell).is_none() {
                    return Err(Error::NotFullCross(cell.to_string()));
                }
                let mut f = k;
                loop {
                    if f == 0 {
                        return Err(Error::NotFullCross("unknown cell".into()));
                    }
                    f -= 1;
                    idx[f] += 1;
                    if idx[f] < levels[f].len() {
                        break;
                    }
                    idx[f] = 0;
                }
            }
        }
        Ok(FactorLayout { names: self.factor_names.clone(), levels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_cov(n: usize) -> DMatrix<f64> {
        DMatrix::zeros(n, 0)
    }

    #[test]
    fn single_observation_cell_is_rejected() {
        let data = AncovaDataset::one_way(vec![1.0, 2.0, 3.0], &["a", "a", "b"], no_cov(3)).unwrap();
        match build_design(&data) {
            Err(Error::LeverageOne { row, leverage }) => {
                assert_eq!(row, 2);
                assert!((leverage - 1.0).abs() < 1e-12);
            }
            other => panic!("expected LeverageOne, got {other:?}"),
        }
    }

    #[test]
    fn balanced_means_model() {
        let data = AncovaDataset::one_way(vec![1.0, 2.0, 3.0, 4.0], &["a", "a", "b", "b"], no_cov(4)).unwrap();
        let d = build_design(&data).unwrap();
        assert_eq!(d.cell_sizes(), &[2, 2]);
        for &h in d.leverages().iter() {
            assert!((h - 0.5).abs() < 1e-15);
        }
        let x = d.x_matrix();
        assert_eq!(x.row_sum().as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn leverages_match_explicit_hat_matrix() {
        let y = vec![1.0, 2.0, 3.0, 2.0, 3.0, 5.0, 4.0, 1.0, 0.0];
        let labels = ["c", "a", "b", "a", "c", "b", "a", "b", "c"];
        let x = DMatrix::from_column_slice(9, 1, &[0.3, 1.2, -0.7, 2.5, 0.1, 1.9, -1.1, 0.8, 3.3]);
        let data = AncovaDataset::one_way(y, &labels, x).unwrap();
        let d = build_design(&data).unwrap();
        let b = d.b_matrix();
        let inv = (b.transpose() * &b).try_inverse().unwrap();
        let hat = &b * inv * b.transpose();
        for k in 0..9 {
            assert!((hat[(k, k)] - d.leverages()[k]).abs() < 1e-12);
        }
        assert!((d.leverages().sum() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn constant_covariate_is_rank_deficient() {
        let x = DMatrix::from_column_slice(4, 1, &[2.0, 2.0, 2.0, 2.0]);
        let data = AncovaDataset::one_way(vec![1.0, 2.0, 3.0, 5.0], &["a", "a", "b", "b"], x).unwrap();
        assert!(matches!(build_design(&data), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn non_finite_and_group_count_errors() {
        assert!(matches!(
            AncovaDataset::one_way(vec![1.0, f64::NAN], &["a", "b"], no_cov(2)),
            Err(Error::NonFiniteInput { row: 1, .. })
        ));
        assert!(matches!(
            AncovaDataset::one_way(vec![1.0, 2.0], &["a", "a"], no_cov(2)),
            Err(Error::InvalidGroupCount(1))
        ));
    }

    #[test]
    fn unpermute_restores_input_order() {
        let y = vec![5.0, 1.0, 4.0, 2.0, 3.0, 6.0];
        let labels = ["b", "a", "b", "a", "c", "c"];
        let data = AncovaDataset::one_way(y.clone(), &labels, no_cov(6)).unwrap();
        let d = build_design(&data).unwrap();
        assert_eq!(d.response().as_slice(), &[1.0, 2.0, 5.0, 4.0, 3.0, 6.0]);
        assert_eq!(d.to_input_order(d.response()), y);
    }

    #[test]
    fn numeric_levels_sort_numerically() {
        let labels = ["1000", "50", "250", "1000", "50", "250"];
        let data = AncovaDataset::one_way(vec![1.0; 6], &labels, no_cov(6)).unwrap();
        let d = build_design(&data).unwrap();
        assert_eq!(d.cell_labels(), vec!["50", "250", "1000"]);
        assert_eq!(d.cell_index(&CellId::single("250")), Some(1));
    }

    #[test]
    fn factor_layout_requires_full_cross() {
        let groups = vec![
            CellId::new(["1", "1"]),
            CellId::new(["1", "1"]),
            CellId::new(["1", "2"]),
            CellId::new(["1", "2"]),
            CellId::new(["2", "1"]),
            CellId::new(["2", "1"]),
        ];
        let data = AncovaDataset::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 7.0], groups, no_cov(6)).unwrap();
        let d = build_design(&data).unwrap();
        assert_eq!(d.factor_layout(), Err(Error::NotFullCross("2:2".into())));
    }
}
