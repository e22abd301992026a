use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulation::{expand_grid, power_study, type1_study, SimSetting, SimulationConfig, StudyKind, StudyReport};

/// What a simulation run produced.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub settings: Vec<SimSetting>,
    pub reports: Vec<StudyReport>,
    /// Human-readable summary (the expanded grid for a dry run).
    pub summary: String,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Results<'a> {
    config: &'a SimulationConfig,
    reports: &'a [StudyReport],
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_path: String,
    kind: StudyKind,
    settings: usize,
    master_seed: u64,
    seed_derivation: &'a str,
    workers: usize,
    started_unix: u64,
    elapsed_seconds: f64,
    files: Vec<String>,
}

#[derive(Serialize)]
struct FlatRow<'a> {
    setting: &'a str,
    a: usize,
    sizes: String,
    variance: String,
    error_law: String,
    contrast: String,
    alternative: String,
    delta: f64,
    method: String,
    n_sim: usize,
    successes: usize,
    failures: usize,
    rejections: usize,
    rate: Option<f64>,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
}

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Run (or with `dry_run`, only expand) the study in `config`.
///
/// Writes `results.json`, `results.csv` and `manifest.json` to `out_dir`. The
/// results files depend only on the config and seeds; timing goes to the manifest.
pub fn run_simulation(
    config: &Path,
    dry_run: bool,
    out_dir: &Path,
    n_sim: Option<usize>,
    n_boot: Option<usize>,
) -> Result<SimulationRun> {
    let mut cfg = SimulationConfig::from_path(config)?;
    if let Some(n) = n_sim {
        cfg.n_sim = n;
    }
    if let Some(n) = n_boot {
        cfg.n_boot = n;
    }
    cfg.validate()?;
    let settings = expand_grid(&cfg)?;
    let mut summary = String::new();
    if dry_run {
        let deltas = cfg.deltas.clone().unwrap_or_default();
        let _ = writeln!(summary, "{} setting(s), methods: {}", settings.len(), join(&cfg.methods));
        if !deltas.is_empty() {
            let _ = writeln!(summary, "deltas: {}", join(&deltas));
        }
        for (i, s) in settings.iter().enumerate() {
            let _ = writeln!(summary, "{:>3}  {}", i + 1, s.label());
        }
        return Ok(SimulationRun { settings, reports: Vec::new(), summary, files: Vec::new() });
    }

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let mut reports = Vec::new();
    for s in &settings {
        match cfg.kind {
            StudyKind::Type1 => reports.push(type1_study(s, &cfg.methods)?),
            StudyKind::Power => {
                reports.extend(power_study(s, &cfg.methods, cfg.deltas.as_deref().unwrap_or_default())?.points)
            }
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();

    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let json_path = out_dir.join("results.json");
    let csv_path = out_dir.join("results.csv");
    let manifest_path = out_dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&Results { config: &cfg, reports: &reports })
        .map_err(|e| Error::Io(e.to_string()))?;
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| io(&json_path, e))?;

    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| io(&csv_path, e))?;
    for r in &reports {
        let s = &r.setting;
        for m in &r.methods {
            w.serialize(FlatRow {
                setting: &r.label,
                a: s.a,
                sizes: r.sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "),
                variance: s.variance.label(),
                error_law: s.error_law.to_string(),
                contrast: format!("{:?}", s.contrast).to_ascii_lowercase(),
                alternative: format!("{:?}", s.alternative).to_ascii_lowercase(),
                delta: s.delta,
                method: m.method.to_string(),
                n_sim: m.replicates,
                successes: m.successes,
                failures: m.failures,
                rejections: m.rejections,
                rate: m.rate,
                ci_lower: m.ci_lower,
                ci_upper: m.ci_upper,
            })
            .map_err(|e| io(&csv_path, e))?;
        }
    }
    w.flush().map_err(|e| io(&csv_path, e))?;

    let files = vec![json_path, csv_path, manifest_path.clone()];
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_path: config.display().to_string(),
        kind: cfg.kind,
        settings: settings.len(),
        master_seed: cfg.master_seed,
        seed_derivation: reports.first().map(|r| r.seed_derivation.as_str()).unwrap_or(""),
        workers: crate::parallel::workers(),
        started_unix: started,
        elapsed_seconds: elapsed,
        files: files.iter().map(|p| p.display().to_string()).collect(),
    };
    let mut mj = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    mj.push('\n');
    std::fs::write(&manifest_path, mj).map_err(|e| io(&manifest_path, e))?;

    let _ = writeln!(summary, "{:<60}  {:>6}  {:>9}  {:>8}  {:>17}  {:>8}", "setting", "delta", "method", "rate", "95% CI", "failures");
    for r in &reports {
        for m in &r.methods {
            let rate = m.rate.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            let ci = match (m.ci_lower, m.ci_upper) {
                (Some(l), Some(u)) => format!("[{l:.4}, {u:.4}]"),
                _ => "-".into(),
            };
            let _ = writeln!(
                summary,
                "{:<60}  {:>6}  {:>9}  {:>8}  {:>17}  {:>8}",
                r.label, r.setting.delta, m.method.to_string(), rate, ci, m.failures
            );
        }
    }
    let _ = writeln!(summary, "wrote {}", files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "));
    Ok(SimulationRun { settings, reports, summary, files })
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}
