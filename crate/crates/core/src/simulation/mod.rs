//! Data generators and Monte Carlo studies of level and power.
//!
//! Responses follow `Y_ik = b_i + M_ik' p + sigma_ik e_ik` with covariates drawn
//! from a normal law and standardized errors `e = (Z - E Z) / sd(Z)`.

mod config;
mod study;

pub use config::{expand_grid, SimulationConfig, StudyKind};
pub use study::{power_study, run_replicates, type1_study, wilson_interval, MethodRate, PowerReport, StudyReport};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal, StudentT, Uniform};
use serde::{Deserialize, Serialize};

use crate::design::{AncovaDataset, CellId, ContrastKind};
use crate::error::{Error, Result};
use crate::mvtdist::QmcSettings;

/// Sample sizes of the unbalanced layout before the increment is added.
pub const UNBALANCED_BASE: [usize; 5] = [8, 10, 13, 17, 20];
/// Group standard deviations after the first in the group-wise layout.
pub const GROUP_SIGMA_TAIL: [f64; 4] = [1.5, 1.0, 0.5, 0.75];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorLaw {
    Normal,
    T5,
    ChiSq12,
    Exp1,
}

impl ErrorLaw {
    pub fn mean(&self) -> f64 {
        match self {
            ErrorLaw::Normal | ErrorLaw::T5 => 0.0,
            ErrorLaw::ChiSq12 => 12.0,
            ErrorLaw::Exp1 => 1.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            ErrorLaw::Normal | ErrorLaw::Exp1 => 1.0,
            ErrorLaw::T5 => 5.0 / 3.0,
            ErrorLaw::ChiSq12 => 24.0,
        }
    }

    /// One raw draw `Z`.
    pub fn raw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ErrorLaw::Normal => rng.sample(StandardNormal),
            ErrorLaw::T5 => StudentT::new(5.0).expect("valid").sample(rng),
            ErrorLaw::ChiSq12 => ChiSquared::new(12.0).expect("valid").sample(rng),
            ErrorLaw::Exp1 => rng.sample(Exp1),
        }
    }

    /// One draw with mean 0 and variance 1.
    pub fn standardized<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        (self.raw(rng) - self.mean()) / self.variance().sqrt()
    }
}

impl std::fmt::Display for ErrorLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorLaw::Normal => "normal",
            ErrorLaw::T5 => "t5",
            ErrorLaw::ChiSq12 => "chisq12",
            ErrorLaw::Exp1 => "exp1",
        })
    }
}

/// Which end of the size vector meets the largest standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pairing {
    /// Sizes increasing: the largest standard deviation meets the smallest group.
    Np,
    /// Sizes decreasing: the largest standard deviation meets the largest group.
    Pp,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum SampleSizes {
    /// `base + increment` in every group.
    Balanced {
        #[serde(default = "default_base")]
        base: usize,
        #[serde(default)]
        increment: usize,
    },
    /// The first `a` entries of `(8, 10, 13, 17, 20)` (NP) or its reverse (PP), plus `increment`.
    Unbalanced {
        pairing: Pairing,
        #[serde(default)]
        increment: usize,
    },
    Explicit { sizes: Vec<usize> },
}

fn default_base() -> usize {
    8
}

impl SampleSizes {
    pub fn sizes(&self, a: usize) -> Vec<usize> {
        match self {
            SampleSizes::Balanced { base, increment } => vec![base + increment; a],
            SampleSizes::Unbalanced { pairing, increment } => {
                let mut base = UNBALANCED_BASE.to_vec();
                if *pairing == Pairing::Pp {
                    base.reverse();
                }
                base.into_iter().take(a).map(|n| n + increment).collect()
            }
            SampleSizes::Explicit { sizes } => sizes.clone(),
        }
    }

    pub fn label(&self, a: usize) -> String {
        let kind = match self {
            SampleSizes::Balanced { .. } => "balanced".to_string(),
            SampleSizes::Unbalanced { pairing, .. } => format!("unbalanced-{pairing:?}").to_ascii_lowercase(),
            SampleSizes::Explicit { .. } => "explicit".to_string(),
        };
        let n: Vec<String> = self.sizes(a).iter().map(|v| v.to_string()).collect();
        format!("{kind}({})", n.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "structure", rename_all = "snake_case")]
pub enum VarianceStructure {
    Homoscedastic,
    /// Standard deviations `(sigma1, 1.5, 1, 0.5, 0.75)` truncated to `a`, unless `sigmas` is given.
    #[serde(rename = "groupwise")]
    GroupWise {
        #[serde(default = "default_sigma1")]
        sigma1: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigmas: Option<Vec<f64>>,
    },
    /// Per-subject standard deviations drawn from `U(low, high)` in every replicate.
    Complete {
        #[serde(default = "default_low")]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
    },
}

fn default_sigma1() -> f64 {
    2.0
}
fn default_low() -> f64 {
    0.5
}
fn default_high() -> f64 {
    4.0
}

impl VarianceStructure {
    pub fn group_sigmas(&self, a: usize) -> Option<Vec<f64>> {
        match self {
            VarianceStructure::Homoscedastic => Some(vec![1.0; a]),
            VarianceStructure::GroupWise { sigma1, sigmas } => Some(match sigmas {
                Some(s) => s.clone(),
                None => std::iter::once(*sigma1).chain(GROUP_SIGMA_TAIL).take(a).collect(),
            }),
            VarianceStructure::Complete { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            VarianceStructure::Homoscedastic => "homoscedastic".into(),
            VarianceStructure::GroupWise { sigma1, sigmas: None } => format!("groupwise(sigma1={sigma1})"),
            VarianceStructure::GroupWise { sigmas: Some(s), .. } => {
                let v: Vec<String> = s.iter().map(|x| x.to_string()).collect();
                format!("groupwise({})", v.join(","))
            }
            VarianceStructure::Complete { low, high } => format!("complete(U({low},{high}))"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    Null,
    Alt1,
    Alt2,
}

impl Alternative {
    /// Multipliers of `delta` per group: Alt1 shifts the first `ceil((a-1)/2)` groups
    /// down; Alt2 shifts the first `ceil((a-2)/2)` down and the next as many up.
    pub fn pattern(&self, a: usize) -> Vec<f64> {
        let mut v = vec![0.0; a];
        match self {
            Alternative::Null => {}
            Alternative::Alt1 => {
                for x in v.iter_mut().take(a.saturating_sub(1).div_ceil(2)) {
                    *x = -1.0;
                }
            }
            Alternative::Alt2 => {
                let k = a.saturating_sub(2).div_ceil(2);
                for (i, x) in v.iter_mut().enumerate().take((2 * k).min(a)) {
                    *x = if i < k { -1.0 } else { 1.0 };
                }
            }
        }
        v
    }
}

/// Covariate law and effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub mean: f64,
    pub sd: f64,
    pub effects: Vec<f64>,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        CovariateSpec { mean: 7.0, sd: 1.0, effects: vec![0.2, 1.0, 1.5, 2.0] }
    }
}

/// One simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    #[serde(default)]
    pub name: String,
    pub a: usize,
    pub sizes: SampleSizes,
    pub variance: VarianceStructure,
    pub error_law: ErrorLaw,
    pub contrast: ContrastKind,
    #[serde(default = "default_alternative")]
    pub alternative: Alternative,
    #[serde(default)]
    pub delta: f64,
    /// Overrides the alternative's per-group multipliers of `delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_pattern: Option<Vec<f64>>,
    #[serde(default = "default_baseline")]
    pub baseline: f64,
    #[serde(default)]
    pub covariates: CovariateSpec,
    pub n_sim: usize,
    pub n_boot: usize,
    pub alpha: f64,
    pub master_seed: u64,
    #[serde(default = "default_sim_qmc")]
    pub qmc: QmcSettings,
}

fn default_alternative() -> Alternative {
    Alternative::Null
}
fn default_baseline() -> f64 {
    7.0
}

/// Integration rule used in simulations; lighter than the single-analysis default.
pub fn default_sim_qmc() -> QmcSettings {
    QmcSettings { shifts: 8, points: 1024, seed: QmcSettings::default().seed }
}

impl SimSetting {
    /// A null-hypothesis setting with desk-scale replicate counts.
    pub fn new(a: usize, sizes: SampleSizes, variance: VarianceStructure, error_law: ErrorLaw, contrast: ContrastKind) -> Self {
        SimSetting {
            name: String::new(),
            a,
            sizes,
            variance,
            error_law,
            contrast,
            alternative: Alternative::Null,
            delta: 0.0,
            shift_pattern: None,
            baseline: 7.0,
            covariates: CovariateSpec::default(),
            n_sim: 2000,
            n_boot: 1000,
            alpha: 0.05,
            master_seed: 20240101,
            qmc: default_sim_qmc(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(3..=5).contains(&self.a) {
            return bad(format!("a must be 3, 4 or 5, got {}", self.a));
        }
        let sizes = self.sizes.sizes(self.a);
        if sizes.len() != self.a {
            return bad(format!("{} sample sizes given for {} groups", sizes.len(), self.a));
        }
        if sizes.iter().any(|&n| n < 2) {
            return bad("every group needs at least 2 subjects".into());
        }
        if let Some(s) = self.variance.group_sigmas(self.a) {
            if s.len() != self.a || s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad("group standard deviations must be positive, one per group".into());
            }
        }
        if let VarianceStructure::Complete { low, high } = self.variance {
            if !(low > 0.0 && high > low && high.is_finite()) {
                return bad("complete heteroscedasticity needs 0 < low < high".into());
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be nonnegative, got {}", self.delta));
        }
        if let Some(p) = &self.shift_pattern {
            if p.len() != self.a {
                return bad("shift_pattern needs one entry per group".into());
            }
        }
        if self.n_sim < 1 {
            return bad("n_sim must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if !(self.covariates.sd >= 0.0) {
            return bad("covariate sd must be nonnegative".into());
        }
        Ok(())
    }

    /// Group effects `b` under the configured alternative.
    pub fn effects(&self) -> Vec<f64> {
        let pattern = self.shift_pattern.clone().unwrap_or_else(|| self.alternative.pattern(self.a));
        pattern.iter().map(|m| self.baseline + m * self.delta).collect()
    }

    pub fn label(&self) -> String {
        if !self.name.is_empty() {
            return self.name.clone();
        }
        format!(
            "a={} {} {} {} {}",
            self.a,
            self.sizes.label(self.a),
            self.variance.label(),
            self.error_law,
            format!("{:?}", self.contrast).to_ascii_lowercase()
        )
    }
}

/// Seed of replicate `rep` (SplitMix64 of `master + rep`).
pub fn replicate_seed(master: u64, rep: u64) -> u64 {
    let mut z = master.wrapping_add(rep.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw one dataset. Groups are labelled `1..=a`; covariates are redrawn every call.
pub fn generate(setting: &SimSetting, rep_seed: u64) -> Result<AncovaDataset> {
    setting.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let a = setting.a;
    let sizes = setting.sizes.sizes(a);
    let n: usize = sizes.iter().sum();
    let m = setting.covariates.effects.len();
    let b = setting.effects();
    let sigmas = setting.variance.group_sigmas(a);
    let complete = match setting.variance {
        VarianceStructure::Complete { low, high } => Some(Uniform::new(low, high).map_err(|e| Error::Config(e.to_string()))?),
        _ => None,
    };
    let mut y = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    let mut cov = DMatrix::zeros(n, m);
    let mut row = 0;
    for i in 0..a {
        for _ in 0..sizes[i] {
            let mut mean = b[i];
            for c in 0..m {
                let z: f64 = rng.sample(StandardNormal);
                let x = setting.covariates.mean + setting.covariates.sd * z;
                cov[(row, c)] = x;
                mean += x * setting.covariates.effects[c];
            }
            let sigma = match (&sigmas, &complete) {
                (Some(s), _) => s[i],
                (None, Some(u)) => u.sample(&mut rng),
                (None, None) => unreachable!(),
            };
            y.push(mean + sigma * setting.error_law.standardized(&mut rng));
            groups.push(CellId::single((i + 1).to_string()));
            row += 1;
        }
    }
    let names = (1..=m).map(|c| format!("x{c}")).collect();
    AncovaDataset::new(y, groups, cov)?.with_factor_names(vec!["group".into()])?.with_covariate_names(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setting() -> SimSetting {
        SimSetting::new(
            3,
            SampleSizes::Balanced { base: 8, increment: 0 },
            VarianceStructure::Homoscedastic,
            ErrorLaw::Normal,
            ContrastKind::Dunnett,
        )
    }

    #[test]
    fn law_moments() {
        assert_eq!((ErrorLaw::ChiSq12.mean(), ErrorLaw::ChiSq12.variance()), (12.0, 24.0));
        assert_eq!((ErrorLaw::Exp1.mean(), ErrorLaw::Exp1.variance()), (1.0, 1.0));
        assert_eq!((ErrorLaw::Normal.mean(), ErrorLaw::Normal.variance()), (0.0, 1.0));
    }

    #[test]
    fn pairing_and_sizes() {
        let np = SampleSizes::Unbalanced { pairing: Pairing::Np, increment: 2 };
        let pp = SampleSizes::Unbalanced { pairing: Pairing::Pp, increment: 0 };
        assert_eq!(np.sizes(3), vec![10, 12, 15]);
        assert_eq!(pp.sizes(5), vec![20, 17, 13, 10, 8]);
        let s = VarianceStructure::GroupWise { sigma1: 4.0, sigmas: None }.group_sigmas(5).unwrap();
        assert_eq!(s, vec![4.0, 1.5, 1.0, 0.5, 0.75]);
    }

    #[test]
    fn alternative_patterns() {
        assert_eq!(Alternative::Alt1.pattern(3), vec![-1.0, 0.0, 0.0]);
        assert_eq!(Alternative::Alt1.pattern(5), vec![-1.0, -1.0, 0.0, 0.0, 0.0]);
        assert_eq!(Alternative::Alt2.pattern(3), vec![-1.0, 1.0, 0.0]);
        assert_eq!(Alternative::Alt2.pattern(4), vec![-1.0, 1.0, 0.0, 0.0]);
        assert_eq!(Alternative::Alt2.pattern(5), vec![-1.0, -1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn generate_is_deterministic() {
        let s = setting();
        let a = generate(&s, 5).unwrap();
        let b = generate(&s, 5).unwrap();
        assert_eq!(a.response(), b.response());
        assert_eq!(a.len(), 24);
        assert_eq!(a.covariates().ncols(), 4);
    }

    #[test]
    fn validation() {
        let mut s = setting();
        s.n_sim = 0;
        assert!(s.validate().is_err());
        let mut s = setting();
        s.a = 2;
        assert!(s.validate().is_err());
    }
}
