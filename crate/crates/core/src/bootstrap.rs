//! Wild bootstrap of the max statistic under per-subject heteroscedasticity.
//!
//! Each replicate draws fair signs `W`, forms `Y* = e (1 - p)^{-1/2} W` from the
//! OLS residuals `e` and leverages `p`, refits by OLS and studentizes with the
//! HC0 covariance of the replicate.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{ContrastMatrix, DesignBundle, LEVERAGE_LIMIT};
use crate::error::{Error, Result};
use crate::estimation::{ols_residuals, FittedAncova, VarianceMode};
use crate::inference::{decide, matrix_rows, max_stat, test_statistics, correlation, MctpOptions, MctpResult, MethodInfo};
use crate::mvtdist::Sidedness;
use crate::parallel;

pub const MIN_BOOT: usize = 100;
/// Runs with a larger share of degenerate replicates are refused.
pub const MAX_DEGENERATE_SHARE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings { n_boot: 10_000, seed: 1 }
    }
}

impl BootstrapSettings {
    pub fn new(n_boot: usize, seed: u64) -> Result<Self> {
        let s = BootstrapSettings { n_boot, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_boot < MIN_BOOT {
            return Err(Error::Config(format!("n_boot must be at least {MIN_BOOT}, got {}", self.n_boot)));
        }
        Ok(())
    }
}

/// Bootstrap sample of the max statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSample {
    /// One value per replicate, in replicate order; `+inf` marks a degenerate replicate.
    pub max_stats: Vec<f64>,
    pub degenerate: usize,
}

impl BootstrapSample {
    /// Sorted copy of the sample.
    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.max_stats.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Leverage-scaled OLS residuals `e / sqrt(1 - p)`, in input row order.
pub fn scaled_residuals(design: &DesignBundle) -> Result<Vec<f64>> {
    Ok(design.to_input_order(&scaled_sorted(design)?))
}

fn scaled_sorted(design: &DesignBundle) -> Result<DVector<f64>> {
    let lev = design.leverages();
    if let Some(k) = lev.iter().position(|&p| p > 1.0 - LEVERAGE_LIMIT) {
        return Err(Error::LeverageOne { row: design.order()[k] + 1, leverage: lev[k] });
    }
    let beta = design.projector() * design.response();
    let e = ols_residuals(design, design.response(), &beta);
    Ok(e.zip_map(lev, |e, p| e / (1.0 - p).sqrt()))
}

/// Fair signs for replicate `rep`; independent of scheduling.
pub(crate) fn rademacher(seed: u64, rep: u64, n: usize, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    let mut bits = 0u64;
    for (k, w) in out.iter_mut().take(n).enumerate() {
        if k % 64 == 0 {
            bits = rng.next_u64();
        }
        *w = if bits & 1 == 1 { 1.0 } else { -1.0 };
        bits >>= 1;
    }
}

struct Replicator<'a> {
    design: &'a DesignBundle,
    scaled: DVector<f64>,
    /// `C P_B[..a]`, `q x N`.
    g: DMatrix<f64>,
    g2: DMatrix<f64>,
    /// Variance scale of each contrast under the scaled residuals, for the degeneracy test.
    scale: Vec<f64>,
    sidedness: Sidedness,
}

impl<'a> Replicator<'a> {
    fn new(design: &'a DesignBundle, c: &ContrastMatrix, sidedness: Sidedness) -> Result<Self> {
        if c.n_cells() != design.n_cells() {
            return Err(Error::InvalidContrast(format!(
                "contrast has {} columns but the design has {} cells",
                c.n_cells(),
                design.n_cells()
            )));
        }
        let scaled = scaled_sorted(design)?;
        if scaled.iter().all(|&v| v == 0.0) {
            return Err(Error::AllResidualsZero);
        }
        let g = c.matrix() * design.projector().rows(0, design.n_cells());
        let g2 = g.map(|v| v * v);
        let s2 = scaled.map(|v| v * v);
        let scale = (&g2 * &s2).iter().cloned().collect();
        Ok(Replicator { design, scaled, g, g2, scale, sidedness })
    }

    fn replicate(&self, seed: u64, rep: u64, w: &mut [f64]) -> f64 {
        let n = self.scaled.len();
        rademacher(seed, rep, n, w);
        let y = DVector::from_iterator(n, self.scaled.iter().zip(w.iter()).map(|(s, w)| s * w));
        let beta = self.design.projector() * &y;
        let e = ols_residuals(self.design, &y, &beta);
        let e2 = e.map(|v| v * v);
        let num = &self.g * &y;
        let var = &self.g2 * &e2;
        let mut t0 = match self.sidedness {
            Sidedness::TwoSided => 0.0_f64,
            Sidedness::Upper => f64::NEG_INFINITY,
        };
        for l in 0..num.len() {
            if !(var[l] > 1e-20 * self.scale[l]) {
                return f64::INFINITY;
            }
            let t = num[l] / var[l].sqrt();
            t0 = match self.sidedness {
                Sidedness::TwoSided => t0.max(t.abs()),
                Sidedness::Upper => t0.max(t),
            };
        }
        t0
    }
}

/// Bootstrap distribution of the max statistic (two-sided).
pub fn bootstrap_distribution(
    design: &DesignBundle,
    c: &ContrastMatrix,
    settings: &BootstrapSettings,
) -> Result<BootstrapSample> {
    bootstrap_distribution_sided(design, c, settings, Sidedness::TwoSided)
}

pub fn bootstrap_distribution_sided(
    design: &DesignBundle,
    c: &ContrastMatrix,
    settings: &BootstrapSettings,
    sidedness: Sidedness,
) -> Result<BootstrapSample> {
    settings.validate()?;
    let rep = Replicator::new(design, c, sidedness)?;
    let n = design.n_obs();
    let max_stats: Vec<f64> = parallel::run(|| {
        (0..settings.n_boot as u64)
            .into_par_iter()
            .map_init(|| vec![0.0; n], |w, r| rep.replicate(settings.seed, r, w))
            .collect()
    });
    let degenerate = max_stats.iter().filter(|v| v.is_infinite() && **v > 0.0).count();
    Ok(BootstrapSample { max_stats, degenerate })
}

/// Critical value: the order statistic `T*_(j)` with `j = B + 1 - floor(alpha (B + 1))`,
/// infinite when `j > B`. Rejecting when `|T| > crit` is the same as
/// `(1 + #{T* >= |T|}) / (B + 1) <= alpha`.
pub fn critical_value(sorted: &[f64], alpha: f64) -> f64 {
    let b = sorted.len();
    let k = (alpha * (b + 1) as f64).floor() as usize;
    if k == 0 || k > b {
        return if k == 0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    sorted[b - k]
}

/// Monte Carlo p-value `(1 + #{T* >= t}) / (B + 1)` against a sorted sample.
pub fn p_value(sorted: &[f64], t: f64) -> f64 {
    let below = sorted.partition_point(|&v| v < t);
    (1 + sorted.len() - below) as f64 / (sorted.len() + 1) as f64
}

/// Bootstrap multiple contrast test; `fit` must be the per-subject (OLS, HC0) fit.
pub fn mctp_boot(fit: &FittedAncova, design: &DesignBundle, c: &ContrastMatrix, opts: &MctpOptions) -> Result<MctpResult> {
    if fit.mode != VarianceMode::SubjectWise {
        return Err(Error::UnsupportedMethod { method: "boot".into(), mode: fit.mode.to_string() });
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be in (0, 1), got {}", opts.alpha)));
    }
    let settings = opts.boot;
    let (effects, se, stats) = test_statistics(fit, c)?;
    let r = correlation(fit, c)?;
    let sample = bootstrap_distribution_sided(design, c, &settings, opts.sidedness)?;
    if sample.degenerate as f64 > MAX_DEGENERATE_SHARE * settings.n_boot as f64 {
        return Err(Error::DegenerateBootstrap { degenerate: sample.degenerate, total: settings.n_boot });
    }
    let sorted = sample.sorted();
    let crit = critical_value(&sorted, opts.alpha);
    let p_raw: Vec<f64> = stats
        .iter()
        .map(|&t| p_value(&sorted, if opts.sidedness == Sidedness::TwoSided { t.abs() } else { t }))
        .collect();
    let dec = decide(&effects, &se, &stats, crit, &p_raw, opts.alpha, opts.sidedness);
    let mut warnings = Vec::new();
    if sample.degenerate > 0 {
        warnings.push(format!("{} bootstrap replicates had zero variance and were set to +inf", sample.degenerate));
    }
    if crit.is_infinite() {
        warnings.push("too few replicates for this alpha; the critical value is infinite".into());
    }
    let global_p = dec.p.iter().cloned().fold(1.0_f64, f64::min);
    Ok(MctpResult {
        method: MethodInfo::Bootstrap {
            n_boot: settings.n_boot,
            seed: settings.seed,
            weights: "rademacher".into(),
            degenerate_replicates: sample.degenerate,
        },
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
        df_candidates: None,
        df_used: None,
        crit,
        global_reject: dec.reject.iter().any(|&b| b),
        p_adj: dec.p,
        ci: dec.ci,
        reject: dec.reject,
        global_p,
        quantile: None,
        qmc: None,
        reconciliation: dec.reconciliation,
        warnings,
    })
}
