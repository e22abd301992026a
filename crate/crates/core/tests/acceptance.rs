//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, Normal};

use ancova_mctp::bootstrap::{bootstrap_distribution, BootstrapSettings};
use ancova_mctp::design::{build_design, contrast, AncovaDataset, ContrastKind};
use ancova_mctp::estimation::{fit, VarianceMode};
use ancova_mctp::inference::{box_dfs, mctp, test_statistics, DfRule, MctpOptions, MctpResult, Method};
use ancova_mctp::mvtdist::{equi_quantile, CorrelationMatrix, Df, QmcSettings, QuantileRequest, Sidedness};
use ancova_mctp::parallel;
use ancova_mctp::simulation::{
    power_study, type1_study, Alternative, ErrorLaw, Pairing, SampleSizes, SimSetting, StudyReport, VarianceStructure,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within_budget(o: Outcome, took: Duration, budget: Option<Duration>) -> Outcome {
    match budget {
        Some(b) if took > b => outcome(false, format!("{}; runtime {:.1?} exceeds {:?}", o.detail, took, b)),
        _ => o,
    }
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn one_way(y: Vec<f64>, labels: &[String], m: DMatrix<f64>) -> AncovaDataset {
    AncovaDataset::one_way(y, labels, m).expect("dataset")
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn welch_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let c = contrast(ContrastKind::Dunnett, 2).unwrap();
    let mut worst_t = 0.0_f64;
    let mut worst_df = 0.0_f64;
    for _ in 0..100 {
        let n1 = rng.random_range(2..=9);
        let n2 = rng.random_range(2..=9);
        let s1 = rng.random_range(0.2..5.0);
        let s2 = rng.random_range(0.2..5.0);
        let g1: Vec<f64> = (0..n1).map(|_| 3.0 + s1 * normal_sample(&mut rng)).collect();
        let g2: Vec<f64> = (0..n2).map(|_| 1.0 + s2 * normal_sample(&mut rng)).collect();

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let (v1, v2) = (var(&g1) / n1 as f64, var(&g2) / n2 as f64);
        let t = (mean(&g2) - mean(&g1)) / (v1 + v2).sqrt();
        let nu = (v1 + v2).powi(2) / (v1 * v1 / (n1 - 1) as f64 + v2 * v2 / (n2 - 1) as f64);

        let labels: Vec<String> = (0..n1).map(|_| "1".to_string()).chain((0..n2).map(|_| "2".to_string())).collect();
        let y: Vec<f64> = g1.iter().chain(&g2).cloned().collect();
        let data = one_way(y, &labels, DMatrix::zeros(n1 + n2, 0));
        let design = build_design(&data).unwrap();
        let f = fit(&design, VarianceMode::GroupWise).unwrap();
        let (_, _, stats) = test_statistics(&f, &c).unwrap();
        let dfs = box_dfs(&f, &c, &design).unwrap();
        worst_t = worst_t.max(rel_err(stats[0], t));
        worst_df = worst_df.max(rel_err(dfs[0], nu));
    }
    outcome(
        worst_t <= 1e-10 && worst_df <= 1e-10,
        format!("max rel. error: statistic {worst_t:.2e}, df {worst_df:.2e} over 100 datasets"),
    )
}

fn ols_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0_f64;
    let mut cases = 0;
    while cases < 100 {
        let a = rng.random_range(2..=5);
        let m = rng.random_range(0..=4);
        let sizes: Vec<usize> = (0..a).map(|_| rng.random_range(2..=10)).collect();
        let n: usize = sizes.iter().sum();
        if n > 50 || n < a + m + 2 {
            continue;
        }
        let labels: Vec<String> =
            sizes.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(format!("g{i}"), k)).collect();
        let cov = DMatrix::from_fn(n, m, |_, _| rng.random_range(-3.0..3.0));
        let y: Vec<f64> = (0..n).map(|_| 10.0 * normal_sample(&mut rng)).collect();
        let data = one_way(y.clone(), &labels, cov.clone());
        let design = build_design(&data).unwrap();
        let f = fit(&design, VarianceMode::Homoscedastic).unwrap();

        let cells = design.cell_labels();
        let mut x = DMatrix::zeros(n, a + m);
        for r in 0..n {
            let col = cells.iter().position(|c| *c == labels[r]).unwrap();
            x[(r, col)] = 1.0;
            for j in 0..m {
                x[(r, a + j)] = cov[(r, j)];
            }
        }
        let xt = x.transpose();
        let beta = (&xt * &x).lu().solve(&(&xt * DVector::from_vec(y))).unwrap();
        for i in 0..a {
            worst = worst.max(rel_err(f.b_hat[i], beta[i]));
        }
        for j in 0..m {
            worst = worst.max(rel_err(f.p_hat[j], beta[a + j]));
        }
        cases += 1;
    }
    outcome(worst <= 1e-10, format!("max rel. error {worst:.2e} over {cases} designs"))
}

/// Two-sided equicoordinate quantile for independent components. For finite df the
/// components share one scale variable, so the probability is a one-dimensional
/// integral over it.
fn independence_quantile(q: usize, df: Df, level: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).unwrap();
    match df {
        Df::Infinite => std.inverse_cdf((1.0 + level.powf(1.0 / q as f64)) / 2.0),
        Df::Finite(nu) => {
            let nu = nu as f64;
            let chi = ChiSquared::new(nu).unwrap();
            let prob = |c: f64| {
                let (hi, panels) = (nu + 60.0 * (2.0 * nu).sqrt() + 60.0, 40_000);
                let h = hi / panels as f64;
                let g = |w: f64| {
                    if w <= 0.0 {
                        return 0.0;
                    }
                    (2.0 * std.cdf(c * (w / nu).sqrt()) - 1.0).powi(q as i32) * chi.pdf(w)
                };
                let mut s = g(0.0) + g(hi);
                for k in 1..panels {
                    s += g(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
                }
                s * h / 3.0
            };
            let (mut lo, mut hi) = (0.0, 20.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if prob(mid) < level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

fn quantile_engine() -> Outcome {
    let mut worst = 0.0_f64;
    let mut lines = Vec::new();
    for q in 1..=3 {
        for df in [Df::Finite(10), Df::Infinite] {
            let got = equi_quantile(&QuantileRequest::new(0.95, df, CorrelationMatrix::identity(q))).unwrap();
            let want = independence_quantile(q, df, 0.95);
            let err = (got.value - want).abs();
            worst = worst.max(err);
            lines.push(format!("q={q} df={df}: {:.4} vs {:.4}", got.value, want));
        }
    }
    outcome(worst <= 0.01, format!("max abs. error {worst:.2e} ({})", lines.join(", ")))
}

/// Lower `p` quantile of a finite sample: the smallest value with empirical cdf >= p.
fn lower_quantile(sorted: &[f64], p: f64) -> f64 {
    let k = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

fn bootstrap_enumeration() -> Outcome {
    let y = vec![3.1, 4.7, 1.2, 2.9, 6.4, 5.0];
    let labels: Vec<String> = ["a", "a", "b", "b", "c", "c"].iter().map(|s| s.to_string()).collect();
    let data = one_way(y.clone(), &labels, DMatrix::zeros(6, 0));
    let design = build_design(&data).unwrap();
    let kind = ContrastKind::GrandMean;
    let c = contrast(kind, 3).unwrap();

    let scaled: Vec<f64> = y
        .chunks(2)
        .flat_map(|p| {
            let m = (p[0] + p[1]) / 2.0;
            [(p[0] - m) * 2f64.sqrt(), (p[1] - m) * 2f64.sqrt()]
        })
        .collect();
    let scale: f64 = scaled.iter().map(|v| v * v).sum();
    let mut exact = Vec::with_capacity(64);
    for bits in 0u32..64 {
        let ys: Vec<f64> =
            (0..6).map(|k| if bits >> k & 1 == 1 { scaled[k] } else { -scaled[k] }).collect();
        let means: Vec<f64> = ys.chunks(2).map(|p| (p[0] + p[1]) / 2.0).collect();
        let ss: Vec<f64> = ys.chunks(2).zip(&means).map(|(p, m)| (p[0] - m).powi(2) + (p[1] - m).powi(2)).collect();
        let mut t0 = 0.0_f64;
        for l in 0..c.n_rows() {
            let row = c.matrix().row(l);
            let num: f64 = (0..3).map(|i| row[i] * means[i]).sum();
            let var: f64 = (0..3).map(|i| row[i] * row[i] * ss[i] / 4.0).sum();
            if var <= 1e-14 * scale {
                t0 = f64::INFINITY;
                break;
            }
            t0 = t0.max(num.abs() / var.sqrt());
        }
        exact.push(t0);
    }
    exact.sort_by(f64::total_cmp);

    let b = 20_000;
    let sample = bootstrap_distribution(&design, &c, &BootstrapSettings { n_boot: b, seed: 404 }).unwrap().sorted();

    let mut ok = true;
    let mut lines = Vec::new();
    let mut check = |p: f64, stated: bool| {
        let se = (p * (1.0 - p) / b as f64).sqrt();
        let got = lower_quantile(&sample, p);
        let lo = lower_quantile(&exact, p - 2.0 * se);
        let hi = lower_quantile(&exact, p + 2.0 * se);
        let slack = 1e-9 * got.abs().min(1e300);
        let inside = lo - slack <= got && got <= hi + slack;
        ok &= inside;
        if stated || !inside {
            lines.push(format!("p={p}: {got:.4} in [{lo:.4}, {hi:.4}]"));
        }
    };
    check(0.90, true);
    check(0.95, true);
    for p in [0.25, 0.5, 0.75, 0.8] {
        check(p, false);
    }
    let inf_share = exact.iter().filter(|v| v.is_infinite()).count() as f64 / 64.0;
    outcome(
        ok,
        format!("{} (degenerate share {inf_share:.3}; lower quantiles also checked)", lines.join(", ")),
    )
}

fn rate_of(report: &StudyReport, method: Method) -> (f64, f64, usize) {
    let r = report.methods.iter().find(|r| r.method == method).expect("method present");
    (r.rate.unwrap_or(f64::NAN), r.std_error.unwrap_or(f64::NAN), r.failures)
}

fn level_check(report: &StudyReport, methods: &[Method], lo: f64, hi: f64) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for &m in methods {
        let (rate, _, failures) = rate_of(report, m);
        ok &= rate >= lo && rate <= hi;
        parts.push(format!("{m} {rate:.4} ({failures} failed)"));
    }
    outcome(ok, format!("{} within [{lo}, {hi}]", parts.join(", ")))
}

fn type1_homoscedastic() -> Outcome {
    let mut s = SimSetting::new(
        3,
        SampleSizes::Explicit { sizes: vec![20, 20, 20] },
        VarianceStructure::Homoscedastic,
        ErrorLaw::Normal,
        ContrastKind::Dunnett,
    );
    s.n_sim = 5000;
    s.master_seed = 5005;
    let methods: Vec<Method> = DfRule::ALL.iter().map(|&r| Method::Mvt(r)).collect();
    let report = type1_study(&s, &methods).unwrap();
    level_check(&report, &methods, 0.040, 0.060)
}

fn type1_groupwise() -> Outcome {
    let mut s = SimSetting::new(
        3,
        SampleSizes::Explicit { sizes: vec![13, 17, 20] },
        VarianceStructure::GroupWise { sigma1: 4.0, sigmas: None },
        ErrorLaw::Normal,
        ContrastKind::Tukey,
    );
    s.n_sim = 3000;
    s.master_seed = 6006;
    let sigmas = s.variance.group_sigmas(3).unwrap();
    if sigmas != [4.0, 1.5, 1.0] {
        return outcome(false, format!("unexpected group sigmas {sigmas:?}"));
    }
    let methods = [Method::Mvt(DfRule::Min)];
    let report = type1_study(&s, &methods).unwrap();
    level_check(&report, &methods, 0.035, 0.065)
}

fn type1_bootstrap_complete() -> Outcome {
    let mut s = SimSetting::new(
        3,
        SampleSizes::Explicit { sizes: vec![10, 13, 17] },
        VarianceStructure::Complete { low: 0.5, high: 4.0 },
        ErrorLaw::Normal,
        ContrastKind::GrandMean,
    );
    s.n_sim = 1000;
    s.n_boot = 1000;
    s.master_seed = 7007;
    let methods = [Method::Bootstrap];
    let report = type1_study(&s, &methods).unwrap();
    level_check(&report, &methods, 0.032, 0.068)
}

fn power_homoscedastic_vs_complete() -> Outcome {
    let deltas: Vec<f64> = (0..=10).map(|k| k as f64 / 5.0).collect();
    let at_one = deltas.iter().position(|&d| d == 1.0).unwrap();
    let methods = [Method::Mvt(DfRule::Min), Method::Bootstrap];
    let curves = |variance: VarianceStructure| {
        let mut s = SimSetting::new(
            3,
            SampleSizes::Balanced { base: 8, increment: 0 },
            variance,
            ErrorLaw::Normal,
            ContrastKind::Dunnett,
        );
        s.alternative = Alternative::Alt1;
        s.n_sim = 2000;
        s.n_boot = 1000;
        s.master_seed = 8008;
        power_study(&s, &methods, &deltas).unwrap()
    };
    let homo = curves(VarianceStructure::Homoscedastic);
    let comp = curves(VarianceStructure::Complete { low: 0.5, high: 4.0 });

    let mut ok = true;
    let mut parts = Vec::new();
    for &m in &methods {
        let (ph, _, _) = rate_of(&homo.points[at_one], m);
        let (pc, _, _) = rate_of(&comp.points[at_one], m);
        ok &= ph - pc >= 0.05;
        parts.push(format!("{m}: {ph:.3} vs {pc:.3}"));
        for report in [&homo, &comp] {
            for w in report.points.windows(2) {
                let (r0, s0, _) = rate_of(&w[0], m);
                let (r1, s1, _) = rate_of(&w[1], m);
                if r1 < r0 - 3.0 * (s0 * s0 + s1 * s1).sqrt() {
                    ok = false;
                    parts.push(format!("{m} decreases at delta {} ({r0:.3} -> {r1:.3})", w[1].setting.delta));
                }
            }
        }
    }
    outcome(ok, format!("power at delta=1, homoscedastic vs complete: {}; curves monotone within 3 SE", parts.join(", ")))
}

fn consonance_violations(res: &MctpResult) -> usize {
    let mut bad = 0;
    for l in 0..res.reject.len() {
        let excludes = !res.ci[l].contains(0.0);
        let p_small = res.p_adj[l] <= res.alpha;
        if res.reject[l] != excludes || res.reject[l] != p_small {
            bad += 1;
        }
    }
    let max_t = match res.sidedness {
        Sidedness::TwoSided => res.statistics.iter().fold(0.0_f64, |m, t| m.max(t.abs())),
        Sidedness::Upper => res.statistics.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    let min_p = res.p_adj.iter().cloned().fold(f64::INFINITY, f64::min);
    if res.global_stat != max_t || res.global_p != min_p {
        bad += 1;
    }
    if res.global_reject != res.reject.iter().any(|&r| r) || res.global_reject != (res.global_p <= res.alpha) {
        bad += 1;
    }
    bad
}

fn consonance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let kinds = [ContrastKind::Dunnett, ContrastKind::Tukey, ContrastKind::GrandMean];
    let (mut checked, mut violations, mut errors, mut rejections) = (0usize, 0usize, 0usize, 0usize);
    for ds in 0..1000u64 {
        let a = rng.random_range(3..=5);
        let m = rng.random_range(0..=2);
        let sizes: Vec<usize> = (0..a).map(|_| rng.random_range(m + 3..=12)).collect();
        let n: usize = sizes.iter().sum();
        let labels: Vec<String> =
            sizes.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(format!("{}", i + 1), k)).collect();
        let shifts: Vec<f64> = (0..a).map(|_| if rng.random_bool(0.5) { rng.random_range(-2.0..2.0) } else { 0.0 }).collect();
        let sig: Vec<f64> = (0..a).map(|_| rng.random_range(0.3..3.0)).collect();
        let cov = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..10.0));
        let y: Vec<f64> = (0..n)
            .map(|r| {
                let g = labels[r].parse::<usize>().unwrap() - 1;
                let x: f64 = (0..m).map(|j| 0.5 * cov[(r, j)]).sum();
                5.0 + shifts[g] + x + sig[g] * normal_sample(&mut rng)
            })
            .collect();
        let data = one_way(y, &labels, cov);
        let design = build_design(&data).unwrap();
        let opts = MctpOptions {
            alpha: [0.01, 0.05, 0.1][ds as usize % 3],
            sidedness: if ds % 4 == 3 { Sidedness::Upper } else { Sidedness::TwoSided },
            qmc: QmcSettings { shifts: 6, points: 256, seed: ds },
            tol: 1e-2,
            boot: BootstrapSettings { n_boot: 199, seed: ds },
            ..MctpOptions::default()
        };
        for kind in kinds {
            let c = contrast(kind, a).unwrap();
            for (mode, method) in
                [(VarianceMode::GroupWise, Method::Mvt(DfRule::Min)), (VarianceMode::SubjectWise, Method::Bootstrap)]
            {
                let res = fit(&design, mode).and_then(|f| mctp(&f, &c, &design, method, &opts));
                match res {
                    Ok(r) => {
                        checked += 1;
                        violations += consonance_violations(&r);
                        rejections += usize::from(r.global_reject);
                    }
                    Err(_) => errors += 1,
                }
            }
        }
    }
    outcome(
        violations == 0 && checked > 0,
        format!("{checked} results, {violations} violations, {rejections} global rejections, {errors} fit errors"),
    )
}

fn determinism() -> Outcome {
    let run = || {
        let mut s = SimSetting::new(
            4,
            SampleSizes::Unbalanced { pairing: Pairing::Np, increment: 0 },
            VarianceStructure::GroupWise { sigma1: 2.0, sigmas: None },
            ErrorLaw::Exp1,
            ContrastKind::Tukey,
        );
        s.n_sim = 150;
        s.n_boot = 200;
        s.master_seed = 1010;
        let methods = [Method::Mvt(DfRule::Min), Method::Normal, Method::Bootstrap];
        let t1 = serde_json::to_string(&type1_study(&s, &methods).unwrap()).unwrap();
        s.alternative = Alternative::Alt2;
        let pw = serde_json::to_string(&power_study(&s, &methods, &[0.0, 1.0]).unwrap()).unwrap();
        format!("{t1}\n{pw}")
    };
    let reference = parallel::with_workers(1, run);
    let mut differing = Vec::new();
    for workers in [1, 2, 3, 8] {
        if parallel::with_workers(workers, run) != reference {
            differing.push(workers);
        }
    }
    if run() != reference {
        differing.push(0);
    }
    outcome(
        differing.is_empty(),
        format!("{} bytes of JSON; worker counts 1, 2, 3, 8 and default; differing: {differing:?}", reference.len()),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Option<Duration>); 10] = [
        ("Welch oracle equivalence", welch_oracle, Some(Duration::from_secs(1))),
        ("OLS normal-equations oracle", ols_oracle, Some(Duration::from_secs(1))),
        ("quantile engine vs independence inversion", quantile_engine, Some(Duration::from_secs(30))),
        ("bootstrap enumeration oracle", bootstrap_enumeration, Some(Duration::from_secs(60))),
        ("type-I error, balanced homoscedastic", type1_homoscedastic, None),
        ("type-I error, group-wise heteroscedastic", type1_groupwise, None),
        ("bootstrap level, complete heteroscedasticity", type1_bootstrap_complete, None),
        ("power, homoscedastic vs complete", power_homoscedastic_vs_complete, None),
        ("compatibility and consonance", consonance, None),
        ("determinism across worker counts", determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = within_budget(check(), start.elapsed(), *budget);
        let took = start.elapsed();
        println!(
            "{} criterion {:>2}: {name} [{:.2?}] {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            took,
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
