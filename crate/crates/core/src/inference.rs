//! Multiple contrast tests: statistics, correlation, degrees of freedom,
//! critical values, adjusted p-values and simultaneous confidence intervals.
//!
//! Every result satisfies, for each contrast,
//! `reject <=> |T| > crit <=> 0 outside the interval <=> p <= alpha`,
//! and the global hypothesis is rejected exactly when some contrast is.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize, Serializer};

use crate::bootstrap::{self, BootstrapSettings};
use crate::design::{ContrastMatrix, DesignBundle};
use crate::error::{Error, Result};
use crate::estimation::{FittedAncova, VarianceMode};
use crate::mvtdist::{integrator_for, solve_quantile, CorrelationMatrix, Df, QmcSettings, Quantile, QuantileRequest, Sidedness};

/// Largest degrees of freedom handed to the t engine.
pub const MAX_FINITE_DF: u32 = 1_000_000;

/// How per-contrast Satterthwaite values are combined into one df.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DfRule {
    Min,
    Mean,
    Max,
}

impl DfRule {
    pub const ALL: [DfRule; 3] = [DfRule::Min, DfRule::Mean, DfRule::Max];
}

impl fmt::Display for DfRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DfRule::Min => "min",
            DfRule::Mean => "mean",
            DfRule::Max => "max",
        })
    }
}

/// Reference distribution for the max statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Multivariate t with Satterthwaite degrees of freedom.
    Mvt(DfRule),
    /// Multivariate normal.
    Normal,
    /// Wild bootstrap with Rademacher weights.
    Bootstrap,
}

impl Method {
    /// Default for a variance mode: `mvt-min` unless variances are per subject.
    pub fn default_for(mode: VarianceMode) -> Method {
        match mode {
            VarianceMode::SubjectWise => Method::Bootstrap,
            _ => Method::Mvt(DfRule::Min),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Mvt(r) => write!(f, "mvt-{r}"),
            Method::Normal => f.write_str("normal"),
            Method::Bootstrap => f.write_str("boot"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mvt-min" => Ok(Method::Mvt(DfRule::Min)),
            "mvt-mean" => Ok(Method::Mvt(DfRule::Mean)),
            "mvt-max" => Ok(Method::Mvt(DfRule::Max)),
            "normal" | "asymptotic" => Ok(Method::Normal),
            "boot" | "bootstrap" => Ok(Method::Bootstrap),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Settings shared by all methods.
#[derive(Debug, Clone, PartialEq)]
pub struct MctpOptions {
    pub alpha: f64,
    pub sidedness: Sidedness,
    pub qmc: QmcSettings,
    /// Accepted Monte Carlo error of the attained probability at the critical value.
    pub tol: f64,
    pub max_samples: usize,
    pub boot: BootstrapSettings,
}

impl Default for MctpOptions {
    fn default() -> Self {
        MctpOptions {
            alpha: 0.05,
            sidedness: Sidedness::TwoSided,
            qmc: QmcSettings::default(),
            tol: 1e-3,
            max_samples: 1 << 22,
            boot: BootstrapSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodInfo {
    MvtApprox { df_rule: DfRule },
    AsymptoticNormal,
    Bootstrap { n_boot: usize, seed: u64, weights: String, degenerate_replicates: usize },
}

/// Simultaneous confidence interval; an infinite bound is written as `"inf"`/`"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    #[serde(serialize_with = "ser_f64")]
    pub lower: f64,
    #[serde(serialize_with = "ser_f64")]
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

pub(crate) fn ser_f64<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// Counts of floating-point boundary cases where a p-value or interval bound was
/// moved so that all decisions agree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Reconciliation {
    pub p_values: usize,
    pub intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MctpResult {
    pub method: MethodInfo,
    pub variance_mode: VarianceMode,
    pub alpha: f64,
    pub sidedness: Sidedness,
    pub cells: Vec<String>,
    pub contrasts: Vec<String>,
    pub contrast_matrix: Vec<Vec<f64>>,
    pub effects: Vec<f64>,
    pub se: Vec<f64>,
    pub statistics: Vec<f64>,
    pub correlation: CorrelationMatrix,
    pub df_candidates: Option<Vec<f64>>,
    pub df_used: Option<Df>,
    #[serde(serialize_with = "ser_f64")]
    pub crit: f64,
    pub p_adj: Vec<f64>,
    pub ci: Vec<Interval>,
    pub reject: Vec<bool>,
    pub global_stat: f64,
    pub global_p: f64,
    pub global_reject: bool,
    pub quantile: Option<Quantile>,
    pub qmc: Option<QmcSettings>,
    pub reconciliation: Reconciliation,
    pub warnings: Vec<String>,
}

/// Effects `c'b`, standard errors `sqrt(c' Psi c)` and statistics `T = c'b / se`.
pub fn test_statistics(fit: &FittedAncova, c: &ContrastMatrix) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_dims(fit, c)?;
    let cm = c.matrix();
    let effects = cm * &fit.b_hat;
    let cov = cm * &fit.psi * cm.transpose();
    let scale = fit.psi.trace().max(0.0);
    let mut se = Vec::with_capacity(c.n_rows());
    let mut stats = Vec::with_capacity(c.n_rows());
    for l in 0..c.n_rows() {
        let v = cov[(l, l)];
        let norm2 = cm.row(l).norm_squared();
        if !(v > 1e-14 * scale * norm2) {
            return Err(Error::DegenerateVariance(c.labels()[l].clone()));
        }
        let s = v.sqrt();
        se.push(s);
        stats.push(effects[l] / s);
    }
    Ok((effects.iter().cloned().collect(), se, stats))
}

fn check_dims(fit: &FittedAncova, c: &ContrastMatrix) -> Result<()> {
    if c.n_cells() != fit.b_hat.len() {
        return Err(Error::InvalidContrast(format!(
            "contrast has {} columns but the design has {} cells",
            c.n_cells(),
            fit.b_hat.len()
        )));
    }
    Ok(())
}

/// Estimated correlation matrix of the contrast statistics.
pub fn correlation(fit: &FittedAncova, c: &ContrastMatrix) -> Result<CorrelationMatrix> {
    test_statistics(fit, c)?;
    let cm = c.matrix();
    let cov = cm * &fit.psi * cm.transpose();
    CorrelationMatrix::from_covariance(&cov)
}

/// Unclamped Satterthwaite degrees of freedom per contrast.
fn box_dfs_raw(fit: &FittedAncova, c: &ContrastMatrix, design: &DesignBundle) -> Result<Vec<f64>> {
    check_dims(fit, c)?;
    let gv = fit.group.as_ref().ok_or_else(|| Error::UnsupportedMethod {
        method: "satterthwaite df".into(),
        mode: fit.mode.to_string(),
    })?;
    let w_all: DMatrix<f64> = c.matrix() * &fit.d;
    let mut out = Vec::with_capacity(c.n_rows());
    for l in 0..c.n_rows() {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, (&s, &n)) in design.cell_starts().iter().zip(design.cell_sizes()).enumerate() {
            let si: f64 = (s..s + n).map(|k| w_all[(l, k)].powi(2)).sum();
            let part = si * gv.sigma2[i];
            num += part;
            den += part * part / gv.dfs[i] as f64;
        }
        if !(num > 0.0) || !(den > 0.0) {
            return Err(Error::DegenerateVariance(c.labels()[l].clone()));
        }
        out.push(num * num / den);
    }
    Ok(out)
}

/// Satterthwaite degrees of freedom per contrast, clamped to at least 1.
pub fn box_dfs(fit: &FittedAncova, c: &ContrastMatrix, design: &DesignBundle) -> Result<Vec<f64>> {
    Ok(box_dfs_raw(fit, c, design)?.into_iter().map(|v| v.max(1.0)).collect())
}

/// Combine candidate df by `rule`, rounding to the nearest integer.
pub fn select_df(rule: DfRule, candidates: &[f64]) -> u32 {
    let v = match rule {
        DfRule::Min => candidates.iter().cloned().fold(f64::INFINITY, f64::min),
        DfRule::Max => candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        DfRule::Mean => candidates.iter().sum::<f64>() / candidates.len() as f64,
    };
    v.round().clamp(1.0, MAX_FINITE_DF as f64) as u32
}

pub(crate) struct Decisions {
    pub ci: Vec<Interval>,
    pub reject: Vec<bool>,
    pub p: Vec<f64>,
    pub reconciliation: Reconciliation,
}

/// Derive decisions from `crit`, then make intervals and p-values agree with them exactly.
pub(crate) fn decide(
    effects: &[f64],
    se: &[f64],
    stats: &[f64],
    crit: f64,
    p_raw: &[f64],
    alpha: f64,
    sidedness: Sidedness,
) -> Decisions {
    let mut rec = Reconciliation::default();
    let mut ci = Vec::with_capacity(effects.len());
    let mut reject = Vec::with_capacity(effects.len());
    let mut p = Vec::with_capacity(effects.len());
    for l in 0..effects.len() {
        let half = crit * se[l];
        let (rej, mut iv) = match sidedness {
            Sidedness::TwoSided => {
                (stats[l].abs() > crit, Interval { lower: effects[l] - half, upper: effects[l] + half })
            }
            Sidedness::Upper => (stats[l] > crit, Interval { lower: effects[l] - half, upper: f64::INFINITY }),
        };
        let excludes = iv.lower > 0.0 || iv.upper < 0.0;
        if rej != excludes {
            rec.intervals += 1;
            if rej {
                if effects[l] > 0.0 {
                    iv.lower = f64::MIN_POSITIVE;
                } else {
                    iv.upper = -f64::MIN_POSITIVE;
                }
            } else {
                iv.lower = iv.lower.min(0.0);
                iv.upper = iv.upper.max(0.0);
            }
        }
        let mut pv = p_raw[l].clamp(0.0, 1.0);
        if rej && pv > alpha {
            pv = alpha;
            rec.p_values += 1;
        } else if !rej && pv <= alpha {
            pv = alpha.next_up();
            rec.p_values += 1;
        }
        ci.push(iv);
        reject.push(rej);
        p.push(pv);
    }
    Decisions { ci, reject, p, reconciliation: rec }
}

pub(crate) fn max_stat(stats: &[f64], sidedness: Sidedness) -> f64 {
    match sidedness {
        Sidedness::TwoSided => stats.iter().fold(0.0_f64, |m, t| m.max(t.abs())),
        Sidedness::Upper => stats.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

struct Prepared {
    rule: Option<DfRule>,
    effects: Vec<f64>,
    se: Vec<f64>,
    stats: Vec<f64>,
    r: CorrelationMatrix,
    df_candidates: Option<Vec<f64>>,
    df: Df,
    warnings: Vec<String>,
}

fn prepare(
    fit: &FittedAncova,
    c: &ContrastMatrix,
    design: &DesignBundle,
    method: Method,
    opts: &MctpOptions,
) -> Result<Prepared> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be in (0, 1), got {}", opts.alpha)));
    }
    let rule = match method {
        Method::Bootstrap => {
            return Err(Error::UnsupportedMethod { method: method.to_string(), mode: "multivariate t".into() })
        }
        Method::Mvt(rule) => Some(rule),
        Method::Normal => None,
    };
    let (effects, se, stats) = test_statistics(fit, c)?;
    let r = correlation(fit, c)?;
    let mut warnings = Vec::new();
    if r.clipped_eigenvalue() > 1e-12 {
        warnings.push(format!(
            "estimated correlation matrix was marginally indefinite (eigenvalue {:.3e}) and was repaired",
            -r.clipped_eigenvalue()
        ));
    }

    let (df_candidates, df) = match rule {
        None => (None, Df::Infinite),
        Some(rule) => {
            let cands = match fit.mode {
                VarianceMode::GroupWise => {
                    let raw = box_dfs_raw(fit, c, design)?;
                    for (l, v) in raw.iter().enumerate() {
                        if *v < 1.0 {
                            warnings.push(format!(
                                "degrees of freedom for '{}' were {:.4} and were raised to 1",
                                c.labels()[l],
                                v
                            ));
                        }
                    }
                    raw.into_iter().map(|v| v.max(1.0)).collect::<Vec<_>>()
                }
                VarianceMode::Homoscedastic => vec![fit.residual_df() as f64; c.n_rows()],
                VarianceMode::SubjectWise => {
                    return Err(Error::UnsupportedMethod { method: method.to_string(), mode: fit.mode.to_string() })
                }
            };
            let df = select_df(rule, &cands);
            if df == MAX_FINITE_DF {
                warnings.push(format!("degrees of freedom capped at {MAX_FINITE_DF}"));
            }
            (Some(cands), Df::Finite(df))
        }
    };
    Ok(Prepared { rule, effects, se, stats, r, df_candidates, df, warnings })
}

/// Outcome of the global test alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalTest {
    pub stat: f64,
    pub p: f64,
    pub reject: bool,
}

/// Global test without the critical value search: one probability evaluation at
/// the observed max statistic, on the same integration rule `mctp` uses.
pub fn global_test(
    fit: &FittedAncova,
    c: &ContrastMatrix,
    design: &DesignBundle,
    method: Method,
    opts: &MctpOptions,
) -> Result<GlobalTest> {
    let prep = prepare(fit, c, design, method, opts)?;
    let req = QuantileRequest {
        level: 1.0 - opts.alpha,
        df: prep.df,
        r: prep.r,
        qmc: opts.qmc,
        tol: opts.tol,
        max_samples: opts.max_samples,
        sidedness: opts.sidedness,
    };
    let integ = integrator_for(&req)?;
    let stat = max_stat(&prep.stats, opts.sidedness);
    let prob = integ.prob(stat).value;
    Ok(GlobalTest { stat, p: (1.0 - prob).clamp(0.0, 1.0), reject: prob > req.level })
}

/// Run a multiple contrast test with the given method.
pub fn mctp(
    fit: &FittedAncova,
    c: &ContrastMatrix,
    design: &DesignBundle,
    method: Method,
    opts: &MctpOptions,
) -> Result<MctpResult> {
    if method == Method::Bootstrap {
        return bootstrap::mctp_boot(fit, design, c, opts);
    }
    let Prepared { rule, effects, se, stats, r, df_candidates, df, warnings } = prepare(fit, c, design, method, opts)?;

    let req = QuantileRequest {
        level: 1.0 - opts.alpha,
        df,
        r: r.clone(),
        qmc: opts.qmc,
        tol: opts.tol,
        max_samples: opts.max_samples,
        sidedness: opts.sidedness,
    };
    let (quant, integ) = solve_quantile(&req)?;
    let crit = quant.value;
    let p_raw: Vec<f64> = stats
        .iter()
        .map(|&t| {
            let x = if opts.sidedness == Sidedness::TwoSided { t.abs() } else { t };
            1.0 - integ.prob(x).value
        })
        .collect();
    let dec = decide(&effects, &se, &stats, crit, &p_raw, opts.alpha, opts.sidedness);
    let global_p = dec.p.iter().cloned().fold(1.0_f64, f64::min);
    let method_info = match rule {
        Some(df_rule) => MethodInfo::MvtApprox { df_rule },
        None => MethodInfo::AsymptoticNormal,
    };
    Ok(MctpResult {
        method: method_info,
        variance_mode: fit.mode,
        alpha: opts.alpha,
        sidedness: opts.sidedness,
        cells: design.cell_labels(),
        contrasts: c.labels().to_vec(),
        contrast_matrix: matrix_rows(c.matrix()),
        global_stat: max_stat(&stats, opts.sidedness),
        effects,
        se,
        statistics: stats,
        correlation: r,
        df_candidates,
        df_used: Some(df),
        crit,
        global_reject: dec.reject.iter().any(|&b| b),
        p_adj: dec.p,
        ci: dec.ci,
        reject: dec.reject,
        global_p,
        qmc: Some(integ.qmc()),
        quantile: Some(quant),
        reconciliation: dec.reconciliation,
        warnings,
    })
}
