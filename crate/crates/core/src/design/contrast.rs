use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::FactorLayout;
use crate::error::{Error, Result};

/// Tolerance on row sums for user-supplied contrasts.
pub const USER_ROW_SUM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastKind {
    /// Many-to-one comparisons against the first cell.
    Dunnett,
    /// All pairwise comparisons.
    Tukey,
    /// Each cell against the mean of all cells.
    GrandMean,
}

impl std::str::FromStr for ContrastKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "dunnett" => Ok(ContrastKind::Dunnett),
            "tukey" => Ok(ContrastKind::Tukey),
            "grandmean" => Ok(ContrastKind::GrandMean),
            other => Err(Error::Config(format!("unknown contrast kind '{other}'"))),
        }
    }
}

/// How a contrast matrix was produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastOrigin {
    Dunnett,
    Tukey,
    GrandMean,
    UserDefined,
    KroneckerComposite,
}

impl From<ContrastKind> for ContrastOrigin {
    fn from(k: ContrastKind) -> Self {
        match k {
            ContrastKind::Dunnett => ContrastOrigin::Dunnett,
            ContrastKind::Tukey => ContrastOrigin::Tukey,
            ContrastKind::GrandMean => ContrastOrigin::GrandMean,
        }
    }
}

/// A `q x a` matrix of contrasts with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix {
    matrix: DMatrix<f64>,
    labels: Vec<String>,
    kind: ContrastOrigin,
}

impl ContrastMatrix {
    fn checked(matrix: DMatrix<f64>, labels: Vec<String>, kind: ContrastOrigin, tol: f64) -> Result<Self> {
        if matrix.nrows() == 0 {
            return Err(Error::InvalidContrast("no contrast rows".into()));
        }
        if labels.len() != matrix.nrows() {
            return Err(Error::InvalidContrast(format!(
                "{} labels for {} rows",
                labels.len(),
                matrix.nrows()
            )));
        }
        for (r, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidContrast(format!("row {} has non-finite entries", r + 1)));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidContrast(format!("row {} is all zero", r + 1)));
            }
            let s: f64 = row.iter().sum();
            if s.abs() > tol {
                return Err(Error::InvalidContrast(format!("row {} sums to {s}, not 0", r + 1)));
            }
        }
        Ok(ContrastMatrix { matrix, labels, kind })
    }

    /// Validate a user-supplied matrix: every row must sum to zero within 1e-8.
    pub fn user_defined(matrix: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        Self::checked(matrix, labels, ContrastOrigin::UserDefined, USER_ROW_SUM_TOL)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kind(&self) -> &ContrastOrigin {
        &self.kind
    }

    /// Number of contrasts `q`.
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of cells `a`.
    pub fn n_cells(&self) -> usize {
        self.matrix.ncols()
    }

    /// Replace generic cell numbers in the labels of a standard contrast by cell names.
    pub fn with_cell_labels(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.n_cells() {
            return Err(Error::InvalidContrast(format!(
                "{} cell names for {} columns",
                names.len(),
                self.n_cells()
            )));
        }
        self.labels = match self.kind {
            ContrastOrigin::Dunnett => (1..self.n_cells()).map(|j| format!("{} - {}", names[j], names[0])).collect(),
            ContrastOrigin::Tukey => pairs(self.n_cells())
                .map(|(i, j)| format!("{} - {}", names[j], names[i]))
                .collect(),
            ContrastOrigin::GrandMean => names.to_vec(),
            _ => self.labels,
        };
        Ok(self)
    }
}

fn pairs(a: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..a).flat_map(move |i| ((i + 1)..a).map(move |j| (i, j)))
}

/// Standard contrast matrix of the given kind for `a` cells.
pub fn contrast(kind: ContrastKind, a: usize) -> Result<ContrastMatrix> {
    if a < 2 {
        return Err(Error::InvalidGroupCount(a));
    }
    let names: Vec<String> = (1..=a).map(|i| i.to_string()).collect();
    let (matrix, labels) = match kind {
        ContrastKind::Dunnett => {
            let mut c = DMatrix::zeros(a - 1, a);
            for r in 0..a - 1 {
                c[(r, 0)] = -1.0;
                c[(r, r + 1)] = 1.0;
            }
            (c, (1..a).map(|j| format!("{} - {}", names[j], names[0])).collect())
        }
        ContrastKind::Tukey => {
            let ps: Vec<_> = pairs(a).collect();
            let mut c = DMatrix::zeros(ps.len(), a);
            for (r, &(i, j)) in ps.iter().enumerate() {
                c[(r, i)] = -1.0;
                c[(r, j)] = 1.0;
            }
            (c, ps.iter().map(|&(i, j)| format!("{} - {}", names[j], names[i])).collect())
        }
        ContrastKind::GrandMean => (centering(a), names),
    };
    ContrastMatrix::checked(matrix, labels, kind.into(), 1e-12)
}

/// `I_a - J_a / a`.
fn centering(a: usize) -> DMatrix<f64> {
    let inv = 1.0 / a as f64;
    DMatrix::from_fn(a, a, |i, j| if i == j { 1.0 - inv } else { -inv })
}

/// A factorial effect: a main effect or a two-factor interaction, by factor name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectSpec {
    Main(String),
    Interaction(String, String),
}

impl std::str::FromStr for EffectSpec {
    type Err = Error;

    /// `"dose"` is a main effect, `"dose:sex"` (or `"dose*sex"`) an interaction.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split([':', '*']).map(str::trim).collect();
        match parts.as_slice() {
            [f] if !f.is_empty() => Ok(EffectSpec::Main(f.to_string())),
            [f, g] if !f.is_empty() && !g.is_empty() => Ok(EffectSpec::Interaction(f.to_string(), g.to_string())),
            _ => Err(Error::Config(format!("cannot parse effect '{s}'"))),
        }
    }
}

/// Contrast matrix for a factorial effect over a full grid of cells.
///
/// A main effect of factor `F` is the Kronecker product (in factor order, first
/// factor slowest) of `base` for `F` with averaging rows `1/l` for every other
/// factor. An interaction of `F` and `G` uses centering matrices for both and
/// averages over the rest; rows that repeat an earlier row up to sign are dropped.
pub fn factorial_contrast(effect: &EffectSpec, layout: &FactorLayout, base: ContrastKind) -> Result<ContrastMatrix> {
    let counts = layout.level_counts();
    let (targets, main) = match effect {
        EffectSpec::Main(f) => (vec![layout.factor_index(f)?], true),
        EffectSpec::Interaction(f, g) => {
            let (i, j) = (layout.factor_index(f)?, layout.factor_index(g)?);
            if i == j {
                return Err(Error::Config(format!("interaction of '{f}' with itself")));
            }
            (vec![i, j], false)
        }
    };

    // Each factor contributes (matrix, row labels).
    let mut mat = DMatrix::from_element(1, 1, 1.0);
    let mut labels = vec![String::new()];
    for (f, &l) in counts.iter().enumerate() {
        let (block, block_labels): (DMatrix<f64>, Vec<String>) = if targets.contains(&f) {
            if l < 2 {
                return Err(Error::InvalidGroupCount(l));
            }
            if main {
                let c = contrast(base, l)?.with_cell_labels(&layout.levels[f])?;
                (c.matrix, c.labels.iter().map(|s| format!("{}={}", layout.names[f], s)).collect())
            } else {
                (
                    centering(l),
                    layout.levels[f].iter().map(|s| format!("{}={}", layout.names[f], s)).collect(),
                )
            }
        } else {
            (DMatrix::from_element(1, l, 1.0 / l as f64), vec![String::new()])
        };
        mat = mat.kronecker(&block);
        labels = labels
            .iter()
            .flat_map(|p| {
                block_labels.iter().map(move |b| match (p.is_empty(), b.is_empty()) {
                    (true, _) => b.clone(),
                    (_, true) => p.clone(),
                    _ => format!("{p} x {b}"),
                })
            })
            .collect();
    }

    if counts.len() == 1 && main {
        return contrast(base, counts[0])?.with_cell_labels(&layout.levels[0]);
    }

    if !main {
        let mut keep_rows = Vec::new();
        let mut keep_labels = Vec::new();
        'rows: for (r, label) in labels.iter().enumerate() {
            let row = mat.row(r);
            for &k in &keep_rows {
                let other = mat.row(k);
                if (row - other).amax() < 1e-12 || (row + other).amax() < 1e-12 {
                    continue 'rows;
                }
            }
            keep_rows.push(r);
            keep_labels.push(label.clone());
        }
        let reduced = DMatrix::from_fn(keep_rows.len(), mat.ncols(), |i, j| mat[(keep_rows[i], j)]);
        return ContrastMatrix::checked(reduced, keep_labels, ContrastOrigin::KroneckerComposite, 1e-10);
    }

    ContrastMatrix::checked(mat, labels, ContrastOrigin::KroneckerComposite, 1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(levels: &[usize]) -> FactorLayout {
        FactorLayout {
            names: (1..=levels.len()).map(|i| format!("f{i}")).collect(),
            levels: levels.iter().map(|&l| (1..=l).map(|v| v.to_string()).collect()).collect(),
        }
    }

    #[test]
    fn dunnett_three_cells() {
        let c = contrast(ContrastKind::Dunnett, 3).unwrap();
        assert_eq!(c.matrix(), &DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, -1.0, 0.0, 1.0]));
        assert_eq!(c.labels(), &["2 - 1", "3 - 1"]);
    }

    #[test]
    fn grand_mean_three_cells() {
        let c = contrast(ContrastKind::GrandMean, 3).unwrap();
        let (t, o) = (2.0 / 3.0, -1.0 / 3.0);
        let expected = DMatrix::from_row_slice(3, 3, &[t, o, o, o, t, o, o, o, t]);
        assert!((c.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn tukey_two_cells_equals_dunnett() {
        let t = contrast(ContrastKind::Tukey, 2).unwrap();
        let d = contrast(ContrastKind::Dunnett, 2).unwrap();
        assert_eq!(t.matrix(), d.matrix());
        assert_eq!(t.matrix(), &DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]));
    }

    #[test]
    fn row_counts_and_sums() {
        for a in 2..9 {
            assert_eq!(contrast(ContrastKind::Dunnett, a).unwrap().n_rows(), a - 1);
            assert_eq!(contrast(ContrastKind::Tukey, a).unwrap().n_rows(), a * (a - 1) / 2);
            for kind in [ContrastKind::Dunnett, ContrastKind::Tukey, ContrastKind::GrandMean] {
                let c = contrast(kind, a).unwrap();
                for row in c.matrix().row_iter() {
                    assert!(row.sum().abs() < 1e-12);
                }
            }
        }
        assert_eq!(contrast(ContrastKind::Tukey, 1), Err(Error::InvalidGroupCount(1)));
    }

    #[test]
    fn user_defined_validation() {
        let ok = DMatrix::from_row_slice(1, 3, &[1.0, -0.5, -0.5]);
        assert!(ContrastMatrix::user_defined(ok, vec!["x".into()]).is_ok());
        let bad = DMatrix::from_row_slice(1, 3, &[1.0, -0.5, -0.4]);
        assert!(matches!(
            ContrastMatrix::user_defined(bad, vec!["x".into()]),
            Err(Error::InvalidContrast(_))
        ));
        let zero = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        assert!(ContrastMatrix::user_defined(zero, vec!["z".into()]).is_err());
    }

    #[test]
    fn main_effect_two_by_two() {
        let c = factorial_contrast(&EffectSpec::Main("f1".into()), &layout(&[2, 2]), ContrastKind::Dunnett).unwrap();
        let expected = DMatrix::from_row_slice(1, 4, &[-0.5, -0.5, 0.5, 0.5]);
        assert!((c.matrix() - expected).amax() < 1e-15);
        assert_eq!(c.kind(), &ContrastOrigin::KroneckerComposite);
    }

    #[test]
    fn interaction_two_by_two_spans_expected_row() {
        let c = factorial_contrast(
            &EffectSpec::Interaction("f1".into(), "f2".into()),
            &layout(&[2, 2]),
            ContrastKind::GrandMean,
        )
        .unwrap();
        assert_eq!(c.n_rows(), 1);
        // Row space equality with [1/2, -1/2, -1/2, 1/2]: the 2x2 stack has rank 1.
        let target = [0.5, -0.5, -0.5, 0.5];
        let stacked = DMatrix::from_fn(2, 4, |i, j| if i == 0 { c.matrix()[(0, j)] } else { target[j] });
        assert_eq!(crate::linalg::rank(&stacked), 1);
    }

    #[test]
    fn one_factor_main_effect_is_plain_contrast() {
        for kind in [ContrastKind::Dunnett, ContrastKind::Tukey, ContrastKind::GrandMean] {
            let f = factorial_contrast(&EffectSpec::Main("f1".into()), &layout(&[4]), kind).unwrap();
            assert_eq!(f.matrix(), contrast(kind, 4).unwrap().matrix());
        }
    }

    #[test]
    fn unknown_factor() {
        let r = factorial_contrast(&EffectSpec::Main("dose".into()), &layout(&[2, 3]), ContrastKind::Dunnett);
        assert_eq!(r, Err(Error::UnknownFactor("dose".into())));
    }

    #[test]
    fn effect_spec_parsing() {
        assert_eq!("dose".parse::<EffectSpec>().unwrap(), EffectSpec::Main("dose".into()));
        assert_eq!(
            "dose:sex".parse::<EffectSpec>().unwrap(),
            EffectSpec::Interaction("dose".into(), "sex".into())
        );
    }
}
