//! Central multivariate normal and t probabilities of symmetric rectangles.
//!
//! `P(|T_1| <= c, ..., |T_q| <= c)` is estimated by randomized quasi-Monte Carlo
//! after the sequential conditioning transform: `T = L Z / S` with `L` the
//! Cholesky factor of the (reordered) correlation matrix, `Z` standard normal
//! and, for the t case, `S = sqrt(chi2_df / df)` drawn through the first lattice
//! coordinate. Variables are reordered so that the most constrained ones come
//! first. For a fixed point set the estimate is a deterministic function of `c`,
//! which is what the quantile search inverts.

mod qmc;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize, Serializer};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
pub use qmc::ShiftedLattice;

/// Conditional variances below this are treated as exactly determined.
const DEGENERATE_VAR: f64 = 1e-10;
/// Eigenvalues in `(-PSD_REPAIR_TOL, 0)` are clipped to zero.
pub const PSD_REPAIR_TOL: f64 = 1e-8;

/// Degrees of freedom of the reference distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
pub enum Df {
    Finite(u32),
    Infinite,
}

impl Df {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Df::Infinite)
    }
}

impl fmt::Display for Df {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Df::Finite(v) => write!(f, "{v}"),
            Df::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Df {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Df::Finite(v) => s.serialize_u32(*v),
            Df::Infinite => s.serialize_str("inf"),
        }
    }
}

#[inline]
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
pub(crate) fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() * 0.398_942_280_401_432_7
}

#[inline]
pub(crate) fn norm_inv(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// CDF of the univariate reference law (standard normal or Student t).
pub fn univariate_cdf(x: f64, df: Df) -> f64 {
    match df {
        Df::Infinite => norm_cdf(x),
        Df::Finite(v) => StudentsT::new(0.0, 1.0, v as f64).expect("df >= 1").cdf(x),
    }
}

/// Quantile of the univariate reference law.
pub fn univariate_quantile(p: f64, df: Df) -> f64 {
    match df {
        Df::Infinite => Normal::standard().inverse_cdf(p),
        Df::Finite(v) => StudentsT::new(0.0, 1.0, v as f64).expect("df >= 1").inverse_cdf(p),
    }
}

/// A validated correlation matrix (unit diagonal, symmetric, positive semidefinite).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    r: DMatrix<f64>,
    repaired: bool,
    clipped: f64,
}

impl CorrelationMatrix {
    pub fn new(r: DMatrix<f64>) -> Result<Self> {
        let q = r.nrows();
        if q == 0 || r.ncols() != q {
            return Err(Error::InvalidInput("correlation matrix must be square and nonempty".into()));
        }
        for i in 0..q {
            if (r[(i, i)] - 1.0).abs() >= 1e-12 {
                return Err(Error::InvalidInput(format!("diagonal entry {i} is {}, not 1", r[(i, i)])));
            }
            for j in 0..i {
                if (r[(i, j)] - r[(j, i)]).abs() > 1e-12 || !r[(i, j)].is_finite() {
                    return Err(Error::InvalidInput("correlation matrix is not symmetric".into()));
                }
            }
        }
        Self::repair(r)
    }

    /// Normalize a covariance matrix. Zero or negative variances are an error.
    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        let q = cov.nrows();
        let sd: Vec<f64> = (0..q).map(|i| cov[(i, i)].sqrt()).collect();
        if let Some(i) = sd.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateVariance(format!("row {}", i + 1)));
        }
        let mut r = DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { cov[(i, j)] / (sd[i] * sd[j]) });
        for i in 0..q {
            for j in 0..i {
                let v = 0.5 * (r[(i, j)] + r[(j, i)]);
                r[(i, j)] = v;
                r[(j, i)] = v;
            }
        }
        Self::repair(r)
    }

    fn repair(r: DMatrix<f64>) -> Result<Self> {
        let q = r.nrows();
        if q == 1 {
            return Ok(CorrelationMatrix { r, repaired: false, clipped: 0.0 });
        }
        let eig = SymmetricEigen::new(r.clone());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min >= 0.0 {
            return Ok(CorrelationMatrix { r, repaired: false, clipped: 0.0 });
        }
        if min <= -PSD_REPAIR_TOL {
            return Err(Error::NotPositiveSemidefinite(min));
        }
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let d: Vec<f64> = (0..q).map(|i| rebuilt[(i, i)].sqrt()).collect();
        let out = DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { rebuilt[(i, j)] / (d[i] * d[j]) });
        Ok(CorrelationMatrix { r: out, repaired: true, clipped: -min })
    }

    pub fn identity(q: usize) -> Self {
        CorrelationMatrix { r: DMatrix::identity(q, q), repaired: false, clipped: 0.0 }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// Whether marginally negative eigenvalues were clipped.
    pub fn repaired(&self) -> bool {
        self.repaired
    }

    /// Magnitude of the most negative eigenvalue removed by the repair (0 when none).
    pub fn clipped_eigenvalue(&self) -> f64 {
        self.clipped
    }

    /// Same law with variables permuted: entry `(i, j)` becomes `(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let q = self.dim();
        CorrelationMatrix {
            r: DMatrix::from_fn(q, q, |i, j| self.r[(perm[i], perm[j])]),
            repaired: self.repaired,
            clipped: self.clipped,
        }
    }
}

impl Serialize for CorrelationMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = self.r.row_iter().map(|r| r.iter().cloned().collect()).collect();
        rows.serialize(s)
    }
}

/// Size and seed of the randomized lattice rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QmcSettings {
    pub shifts: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for QmcSettings {
    fn default() -> Self {
        QmcSettings { shifts: 12, points: 4096, seed: 0x5eed_0001 }
    }
}

/// Probability estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Which rectangle: `|T_l| <= c` for all `l` or the one-sided `T_l <= c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    Upper,
}

type RadialKey = (u32, u64, usize, usize, usize);

fn radial_cache() -> &'static Mutex<HashMap<RadialKey, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<RadialKey, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `sqrt(chi2_df / df)` at the first lattice coordinate of every point, memoized per rule.
fn radial_scales(df: u32, lattice: &ShiftedLattice, qmc: &QmcSettings) -> Arc<Vec<f64>> {
    let key = (df, qmc.seed, lattice.n_shifts(), lattice.n_points(), lattice.dim());
    if let Some(v) = radial_cache().lock().unwrap().get(&key) {
        return Arc::clone(v);
    }
    let chi = ChiSquared::new(df as f64).expect("df >= 1");
    let nu = df as f64;
    let mut u = vec![0.0; lattice.dim()];
    let mut out = Vec::with_capacity(lattice.n_shifts() * lattice.n_points());
    for r in 0..lattice.n_shifts() {
        for k in 0..lattice.n_points() {
            lattice.point(r, k, &mut u);
            let p = u[0].clamp(1e-15, 1.0 - 1e-15);
            out.push((chi.inverse_cdf(p) / nu).sqrt());
        }
    }
    let out = Arc::new(out);
    let mut cache = radial_cache().lock().unwrap();
    if cache.len() >= 256 {
        cache.clear();
    }
    cache.insert(key, Arc::clone(&out));
    out
}

/// A prepared integration rule for one correlation matrix and df.
///
/// The variable ordering is fixed at construction (from a reference bound),
/// so [`RectIntegrator::prob`] is a deterministic function of `c`.
#[derive(Debug, Clone)]
pub struct RectIntegrator {
    q: usize,
    df: Df,
    sidedness: Sidedness,
    /// Lower-triangular factor packed by rows.
    packed: Vec<f64>,
    order: Vec<usize>,
    lattice: Option<ShiftedLattice>,
    radial: Option<Arc<Vec<f64>>>,
    qmc: QmcSettings,
}

impl RectIntegrator {
    pub fn new(r: &CorrelationMatrix, df: Df, qmc: QmcSettings, reference: f64) -> Result<Self> {
        Self::with_sidedness(r, df, qmc, reference, Sidedness::TwoSided)
    }

    pub fn with_sidedness(
        r: &CorrelationMatrix,
        df: Df,
        qmc: QmcSettings,
        reference: f64,
        sidedness: Sidedness,
    ) -> Result<Self> {
        if let Df::Finite(0) = df {
            return Err(Error::InvalidInput("degrees of freedom must be at least 1".into()));
        }
        if qmc.shifts < 2 || qmc.points < 1 {
            return Err(Error::InvalidInput("QMC rule needs at least 2 shifts and 1 point".into()));
        }
        let q = r.dim();
        let lower_inf = sidedness == Sidedness::Upper;
        let (chol, order) = reorder_cholesky(r.matrix(), reference.abs().max(1e-3), lower_inf);
        let needs_lattice = q > 1 || !df.is_infinite();
        let dim = (q - 1) + usize::from(!df.is_infinite());
        let lattice = (needs_lattice && q > 1).then(|| ShiftedLattice::new(dim, qmc.shifts, qmc.points, qmc.seed));
        let radial = match (df, &lattice) {
            (Df::Finite(v), Some(lat)) => Some(radial_scales(v, lat, &qmc)),
            _ => None,
        };
        let packed = (0..q).flat_map(|i| (0..=i).map(move |k| (i, k))).map(|ik| chol[ik]).collect();
        Ok(RectIntegrator { q, df, sidedness, packed, order, lattice, radial, qmc })
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn df(&self) -> Df {
        self.df
    }

    pub fn qmc(&self) -> QmcSettings {
        self.qmc
    }

    /// Variable order chosen by the prioritization heuristic.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Estimate `P(|T_l| <= c for all l)` (or `P(T_l <= c)` one-sided).
    pub fn prob(&self, c: f64) -> ProbEstimate {
        if c.is_nan() {
            return ProbEstimate { value: f64::NAN, std_error: f64::NAN };
        }
        if c == f64::INFINITY {
            return ProbEstimate { value: 1.0, std_error: 0.0 };
        }
        let two = self.sidedness == Sidedness::TwoSided;
        if c <= 0.0 && two {
            return ProbEstimate { value: 0.0, std_error: 0.0 };
        }
        let lattice = match &self.lattice {
            None => {
                // One dimension: exact.
                let value = if two {
                    (2.0 * univariate_cdf(c, self.df) - 1.0).max(0.0)
                } else {
                    univariate_cdf(c, self.df)
                };
                return ProbEstimate { value, std_error: 0.0 };
            }
            Some(l) => l,
        };
        let t_offset = usize::from(self.radial.is_some());
        let mut u = vec![0.0; lattice.dim()];
        let mut y = vec![0.0; self.q];
        let n = lattice.n_points();
        let k_shifts = lattice.n_shifts();
        let mut means = Vec::with_capacity(k_shifts);
        for r in 0..k_shifts {
            let mut acc = 0.0;
            for k in 0..n {
                lattice.point(r, k, &mut u);
                let scale = match &self.radial {
                    Some(s) => s[r * n + k],
                    None => 1.0,
                };
                acc += self.integrand(c * scale, &u[t_offset..], &mut y, two);
            }
            means.push(acc / n as f64);
        }
        let kf = k_shifts as f64;
        let mean = means.iter().sum::<f64>() / kf;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (kf * (kf - 1.0));
        ProbEstimate { value: mean.clamp(0.0, 1.0), std_error: var.sqrt() }
    }

    #[inline]
    fn integrand(&self, c: f64, u: &[f64], y: &mut [f64], two: bool) -> f64 {
        let mut f = 1.0;
        let mut row = 0;
        for i in 0..self.q {
            let l = &self.packed[row..row + i + 1];
            row += i + 1;
            let s: f64 = l[..i].iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            let sd = l[i];
            if sd > 0.0 {
                let lo = if two { norm_cdf((-c - s) / sd) } else { 0.0 };
                let hi = norm_cdf((c - s) / sd);
                let p = hi - lo;
                if p <= 0.0 {
                    return 0.0;
                }
                f *= p;
                if i + 1 < self.q {
                    let arg = (lo + u[i] * p).clamp(1e-300, 1.0 - 1e-16);
                    y[i] = norm_inv(arg);
                }
            } else {
                if s > c || (two && s < -c) {
                    return 0.0;
                }
                y[i] = 0.0;
            }
        }
        f
    }

    /// Root of `prob(c) = level` on this rule's fixed point set.
    fn solve(&self, level: f64) -> Result<f64> {
        let q = self.q as f64;
        let two = self.sidedness == Sidedness::TwoSided;
        let (p_lo, p_hi) = if two {
            ((1.0 + level) / 2.0, 1.0 - (1.0 - level) / (2.0 * q))
        } else {
            (level, 1.0 - (1.0 - level) / q)
        };
        if self.lattice.is_none() {
            return Ok(univariate_quantile(p_lo, self.df));
        }
        let mut lo = univariate_quantile(p_lo, self.df);
        let mut hi = univariate_quantile(p_hi, self.df);
        if !two && lo <= 0.0 {
            lo = lo.min(-1.0);
        }
        let g = |c: f64| self.prob(c).value - level;
        let mut tries = 0;
        while g(lo) > 0.0 {
            lo = if lo > 0.0 { lo * 0.5 } else { lo * 2.0 - 1.0 };
            tries += 1;
            if tries > 60 {
                return Err(Error::NoConvergence("could not bracket the quantile from below".into()));
            }
        }
        while g(hi) < 0.0 {
            hi = hi * 1.5 + 1.0;
            tries += 1;
            if tries > 60 {
                return Err(Error::NoConvergence("could not bracket the quantile from above".into()));
            }
        }
        let mut conv = SimpleConvergency { eps: 1e-12, max_iter: 200 };
        find_root_brent(lo, hi, g, &mut conv).map_err(|e| Error::NoConvergence(format!("{e:?}")))
    }
}

/// Prioritized Cholesky factorization for the bound `[-c, c]` (or `(-inf, c]`).
///
/// At each step the remaining variable with the smallest conditional interval
/// probability is moved forward; conditional means use truncated-normal
/// expectations of the variables already placed.
fn reorder_cholesky(r: &DMatrix<f64>, c: f64, lower_inf: bool) -> (DMatrix<f64>, Vec<usize>) {
    let q = r.nrows();
    let mut cov = r.clone();
    let mut l = DMatrix::<f64>::zeros(q, q);
    let mut order: Vec<usize> = (0..q).collect();
    let mut y = vec![0.0; q];
    let bounds = |s: f64, sd: f64| {
        let a = if lower_inf { f64::NEG_INFINITY } else { (-c - s) / sd };
        (a, (c - s) / sd)
    };
    for i in 0..q {
        let mut best = i;
        let mut best_p = f64::INFINITY;
        for j in i..q {
            let var = cov[(j, j)] - (0..i).map(|k| l[(j, k)].powi(2)).sum::<f64>();
            let s: f64 = (0..i).map(|k| l[(j, k)] * y[k]).sum();
            let p = if var > DEGENERATE_VAR {
                let (a, b) = bounds(s, var.sqrt());
                norm_cdf(b) - if a.is_finite() { norm_cdf(a) } else { 0.0 }
            } else if s <= c && (lower_inf || s >= -c) {
                1.0
            } else {
                0.0
            };
            if p < best_p {
                best_p = p;
                best = j;
            }
        }
        if best != i {
            cov.swap_rows(i, best);
            cov.swap_columns(i, best);
            l.swap_rows(i, best);
            order.swap(i, best);
        }
        let var = cov[(i, i)] - (0..i).map(|k| l[(i, k)].powi(2)).sum::<f64>();
        if var > DEGENERATE_VAR {
            let sd = var.sqrt();
            l[(i, i)] = sd;
            for j in (i + 1)..q {
                let v = cov[(j, i)] - (0..i).map(|k| l[(j, k)] * l[(i, k)]).sum::<f64>();
                l[(j, i)] = v / sd;
            }
            let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
            let (a, b) = bounds(s, sd);
            let pa = if a.is_finite() { norm_cdf(a) } else { 0.0 };
            let mass = norm_cdf(b) - pa;
            let da = if a.is_finite() { norm_pdf(a) } else { 0.0 };
            y[i] = if mass > 1e-300 {
                (da - norm_pdf(b)) / mass
            } else if a.is_finite() {
                0.5 * (a + b)
            } else {
                b
            };
        } else {
            l[(i, i)] = 0.0;
            y[i] = 0.0;
        }
    }
    (l, order)
}

/// Rectangle probability `P(|T_1| <= c, ..., |T_q| <= c)` for `t(df, R)` (normal when `df` is infinite).
pub fn rect_prob(c: f64, df: Df, r: &CorrelationMatrix, qmc: &QmcSettings) -> Result<ProbEstimate> {
    if !(c > 0.0) {
        return Err(Error::InvalidInput(format!("bound must be positive, got {c}")));
    }
    Ok(RectIntegrator::new(r, df, *qmc, c)?.prob(c))
}

/// Request for an equicoordinate quantile (two-sided unless stated otherwise).
#[derive(Debug, Clone)]
pub struct QuantileRequest {
    pub level: f64,
    pub df: Df,
    pub r: CorrelationMatrix,
    pub qmc: QmcSettings,
    /// Accepted Monte Carlo error of the attained probability.
    pub tol: f64,
    /// Upper bound on `shifts * points` when refining the rule.
    pub max_samples: usize,
    pub sidedness: Sidedness,
}

impl QuantileRequest {
    pub fn new(level: f64, df: Df, r: CorrelationMatrix) -> Self {
        QuantileRequest { level, df, r, qmc: QmcSettings::default(), tol: 1e-3, max_samples: 1 << 22, sidedness: Sidedness::TwoSided }
    }
}

/// Result of an equicoordinate quantile search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantile {
    pub value: f64,
    /// Estimated `P(max |T_l| <= value)` with its standard error.
    pub attained: ProbEstimate,
    /// Points per shift in the rule that achieved the tolerance.
    pub points: usize,
    pub shifts: usize,
}

fn reference_bound(req: &QuantileRequest) -> f64 {
    let sides = if req.sidedness == Sidedness::TwoSided { 2.0 } else { 1.0 };
    univariate_quantile(1.0 - (1.0 - req.level) / (sides * req.r.dim() as f64), req.df)
}

/// The integrator `solve_quantile` starts from (before any refinement).
pub fn integrator_for(req: &QuantileRequest) -> Result<RectIntegrator> {
    RectIntegrator::with_sidedness(&req.r, req.df, req.qmc, reference_bound(req), req.sidedness)
}

/// Find the prepared integrator and quantile meeting `3 * SE <= tol`, refining the rule as needed.
pub fn solve_quantile(req: &QuantileRequest) -> Result<(Quantile, RectIntegrator)> {
    if !(req.level > 0.0 && req.level < 1.0) {
        return Err(Error::InvalidInput(format!("level must be in (0, 1), got {}", req.level)));
    }
    if !(req.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let mut qmc = req.qmc;
    loop {
        let integ = RectIntegrator::with_sidedness(&req.r, req.df, qmc, reference_bound(req), req.sidedness)?;
        let c = integ.solve(req.level)?;
        let attained = integ.prob(c);
        if 3.0 * attained.std_error <= req.tol {
            let quant = Quantile { value: c, attained, points: qmc.points, shifts: qmc.shifts };
            return Ok((quant, integ));
        }
        if qmc.shifts * qmc.points * 2 > req.max_samples {
            return Err(Error::NoConvergence(format!(
                "standard error {:.2e} above tolerance {:.1e} with {} samples",
                attained.std_error,
                req.tol,
                qmc.shifts * qmc.points
            )));
        }
        qmc.points *= 2;
    }
}

/// `level` equicoordinate quantile of `t(df, R)` (normal when infinite).
pub fn equi_quantile(req: &QuantileRequest) -> Result<Quantile> {
    solve_quantile(req).map(|(q, _)| q)
}

/// Multiplicity-adjusted p-values `1 - P(max |T| <= |t_l|)`.
pub fn adj_pvalues(t_obs: &[f64], df: Df, r: &CorrelationMatrix, qmc: &QmcSettings) -> Result<Vec<f64>> {
    if t_obs.len() != r.dim() {
        return Err(Error::InvalidInput("statistic count does not match correlation matrix".into()));
    }
    if t_obs.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("observed statistics must be finite".into()));
    }
    let reference = t_obs.iter().fold(0.0_f64, |m, t| m.max(t.abs())).max(1.0);
    let integ = RectIntegrator::new(r, df, *qmc, reference)?;
    Ok(t_obs.iter().map(|t| (1.0 - integ.prob(t.abs()).value).clamp(0.0, 1.0)).collect())
}
