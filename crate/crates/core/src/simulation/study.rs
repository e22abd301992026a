use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{generate, replicate_seed, Alternative, SimSetting};
use crate::bootstrap::{mctp_boot, BootstrapSettings};
use crate::design::{build_design, contrast};
use crate::error::{Error, Result};
use crate::estimation::{fit, FittedAncova, VarianceMode};
use crate::inference::{global_test, MctpOptions, Method};
use crate::parallel;

const Z_95: f64 = 1.959_963_984_540_054;

/// Rejection rate of one method over the successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRate {
    pub method: Method,
    pub replicates: usize,
    pub successes: usize,
    pub rejections: usize,
    pub failures: usize,
    pub failure_kinds: BTreeMap<String, usize>,
    pub rate: Option<f64>,
    pub std_error: Option<f64>,
    /// 95% Wilson interval.
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub label: String,
    pub setting: SimSetting,
    pub sizes: Vec<usize>,
    pub effects: Vec<f64>,
    pub seed_derivation: String,
    pub methods: Vec<MethodRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerReport {
    pub label: String,
    pub deltas: Vec<f64>,
    pub points: Vec<StudyReport>,
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z_95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn error_kind(e: &Error) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

fn bootstrap_seed(rep_seed: u64) -> u64 {
    replicate_seed(rep_seed, 0xB0075)
}

fn one_replicate(setting: &SimSetting, methods: &[Method], rep: u64) -> Vec<std::result::Result<bool, Error>> {
    let seed = replicate_seed(setting.master_seed, rep);
    let prepared = generate(setting, seed)
        .and_then(|d| build_design(&d))
        .and_then(|d| contrast(setting.contrast, setting.a).map(|c| (d, c)));
    let (design, c) = match prepared {
        Ok(v) => v,
        Err(e) => return vec![Err(e); methods.len()],
    };
    let mut group_fit: Option<Result<FittedAncova>> = None;
    let mut subject_fit: Option<Result<FittedAncova>> = None;
    let mut opts = MctpOptions { alpha: setting.alpha, qmc: setting.qmc, ..MctpOptions::default() };
    opts.boot = BootstrapSettings { n_boot: setting.n_boot, seed: bootstrap_seed(seed) };
    methods
        .iter()
        .map(|&m| match m {
            Method::Bootstrap => {
                let f = subject_fit.get_or_insert_with(|| fit(&design, VarianceMode::SubjectWise)).clone()?;
                mctp_boot(&f, &design, &c, &opts).map(|r| r.global_reject)
            }
            _ => {
                let f = group_fit.get_or_insert_with(|| fit(&design, VarianceMode::GroupWise)).clone()?;
                global_test(&f, &c, &design, m, &opts).map(|g| g.reject)
            }
        })
        .collect()
}

/// Run `setting.n_sim` replicates and tabulate global rejections per method.
///
/// Multivariate t and normal methods use the group-wise fit; the bootstrap uses
/// the per-subject fit. Replicate `r` draws its data from `replicate_seed(master_seed, r)`.
pub fn run_replicates(setting: &SimSetting, methods: &[Method]) -> Result<StudyReport> {
    setting.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("at least one method is required".into()));
    }
    if methods.contains(&Method::Bootstrap) {
        BootstrapSettings { n_boot: setting.n_boot, seed: 0 }.validate()?;
    }
    let outcomes: Vec<Vec<std::result::Result<bool, Error>>> = parallel::run(|| {
        (0..setting.n_sim as u64).into_par_iter().map(|r| one_replicate(setting, methods, r)).collect()
    });
    let rates = methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let mut successes = 0;
            let mut rejections = 0;
            let mut failure_kinds = BTreeMap::new();
            for o in &outcomes {
                match &o[j] {
                    Ok(rej) => {
                        successes += 1;
                        rejections += usize::from(*rej);
                    }
                    Err(e) => *failure_kinds.entry(error_kind(e)).or_insert(0) += 1,
                }
            }
            let (rate, se, lo, hi) = if successes > 0 {
                let p = rejections as f64 / successes as f64;
                let (lo, hi) = wilson_interval(rejections, successes);
                (Some(p), Some((p * (1.0 - p) / successes as f64).sqrt()), Some(lo), Some(hi))
            } else {
                (None, None, None, None)
            };
            MethodRate {
                method,
                replicates: outcomes.len(),
                successes,
                rejections,
                failures: outcomes.len() - successes,
                failure_kinds,
                rate,
                std_error: se,
                ci_lower: lo,
                ci_upper: hi,
            }
        })
        .collect();
    Ok(StudyReport {
        label: setting.label(),
        setting: setting.clone(),
        sizes: setting.sizes.sizes(setting.a),
        effects: setting.effects(),
        seed_derivation: format!(
            "replicate r uses splitmix64(master_seed + (r + 1) * 0x9E3779B97F4A7C15) with master_seed = {}; \
             bootstrap weights use the same map applied to that seed",
            setting.master_seed
        ),
        methods: rates,
    })
}

/// Empirical level under the global null hypothesis.
pub fn type1_study(setting: &SimSetting, methods: &[Method]) -> Result<StudyReport> {
    if setting.alternative != Alternative::Null || setting.shift_pattern.is_some() {
        return Err(Error::Config("a type-I error study needs alternative = null".into()));
    }
    run_replicates(setting, methods)
}

/// Rejection rates over a grid of shifts `delta`, reusing the replicate seeds at every point.
pub fn power_study(setting: &SimSetting, methods: &[Method], deltas: &[f64]) -> Result<PowerReport> {
    if setting.alternative == Alternative::Null && setting.shift_pattern.is_none() {
        return Err(Error::Config("a power study needs alternative = alt1 or alt2".into()));
    }
    if deltas.is_empty() || deltas.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
        return Err(Error::Config("deltas must be a nonempty list of nonnegative numbers".into()));
    }
    let points = deltas
        .iter()
        .map(|&delta| run_replicates(&SimSetting { delta, ..setting.clone() }, methods))
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerReport { label: setting.label(), deltas: deltas.to_vec(), points })
}
