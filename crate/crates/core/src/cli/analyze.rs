use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::AnalyzeArgs;
use crate::bootstrap::BootstrapSettings;
use crate::design::{build_design, contrast, factorial_contrast, AncovaDataset, CellId, ContrastKind, ContrastMatrix, EffectSpec};
use crate::error::{Error, Result};
use crate::estimation::{fit, VarianceMode};
use crate::inference::{mctp, MctpOptions, MctpResult, Method};
use crate::mvtdist::{QmcSettings, Sidedness};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(OutputFormat::Text),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format '{other}'"))),
        }
    }
}

/// Analysis settings as written in a TOML file; every field may be overridden by a flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    input: Option<PathBuf>,
    response: Option<String>,
    #[serde(default)]
    factors: Vec<String>,
    #[serde(default)]
    covariates: Vec<String>,
    contrast: Option<String>,
    contrast_file: Option<PathBuf>,
    effect: Option<String>,
    variance_mode: Option<String>,
    method: Option<String>,
    alpha: Option<f64>,
    n_boot: Option<usize>,
    seed: Option<u64>,
    format: Option<String>,
    #[serde(default)]
    one_sided: bool,
}

/// Fully resolved analysis settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    pub response: String,
    pub factors: Vec<String>,
    pub covariates: Vec<String>,
    pub contrast: Option<ContrastKind>,
    pub contrast_file: Option<PathBuf>,
    pub effect: Option<EffectSpec>,
    pub variance_mode: VarianceMode,
    pub method: Method,
    pub alpha: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub format: OutputFormat,
    pub one_sided: bool,
}

impl AnalysisConfig {
    /// Merge a config file (if any) with command-line flags and validate.
    pub fn resolve(args: &AnalyzeArgs) -> Result<Self> {
        let (file, base) = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                let cfg: ConfigFile = toml::from_str(&text).map_err(|e| Error::Config(e.message().to_string()))?;
                (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (ConfigFile::default(), PathBuf::new()),
        };
        let rel = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        let input = args
            .input
            .clone()
            .or_else(|| file.input.clone().map(rel))
            .ok_or_else(|| Error::Config("no input file given (--input)".into()))?;
        let response = args
            .response
            .clone()
            .or(file.response)
            .ok_or_else(|| Error::Config("no response column given (--response)".into()))?;
        let factors = if args.factors.is_empty() { file.factors } else { args.factors.clone() };
        let covariates = if args.covariates.is_empty() { file.covariates } else { args.covariates.clone() };
        let contrast = args.contrast.clone().or(file.contrast).map(|s| s.parse()).transpose()?;
        let contrast_file = args.contrast_file.clone().or_else(|| file.contrast_file.map(rel));
        let effect = args.effect.clone().or(file.effect).map(|s| s.parse()).transpose()?;
        let variance_mode = match args.variance_mode.clone().or(file.variance_mode) {
            Some(s) => s.parse()?,
            None => VarianceMode::GroupWise,
        };
        let method = match args.method.clone().or(file.method) {
            Some(s) => s.parse()?,
            None => Method::default_for(variance_mode),
        };
        let cfg = AnalysisConfig {
            input,
            response,
            factors,
            covariates,
            contrast,
            contrast_file,
            effect,
            variance_mode,
            method,
            alpha: args.alpha.or(file.alpha).unwrap_or(0.05),
            n_boot: args.n_boot.or(file.n_boot).unwrap_or(BootstrapSettings::default().n_boot),
            seed: args.seed.or(file.seed).unwrap_or(1),
            format: args.format.clone().or(file.format).map(|s| s.parse()).transpose()?.unwrap_or_default(),
            one_sided: args.one_sided || file.one_sided,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::Config("at least one factor column is required (--factor)".into()));
        }
        let mut cols: Vec<&str> = vec![self.response.as_str()];
        cols.extend(self.factors.iter().map(String::as_str));
        cols.extend(self.covariates.iter().map(String::as_str));
        let mut sorted = cols.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("column '{}' is used more than once", w[0])));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.contrast_file.is_some() && self.effect.is_some() {
            return Err(Error::Config("give either a contrast file or an effect, not both".into()));
        }
        if self.method == Method::Bootstrap {
            BootstrapSettings { n_boot: self.n_boot, seed: self.seed }.validate()?;
        }
        Ok(())
    }
}

/// Read a CSV file with a header row into a dataset.
pub fn read_dataset(path: &Path, response: &str, factors: &[String], covariates: &[String]) -> Result<AncovaDataset> {
    let file_err = |e: &dyn std::fmt::Display| Error::Io(format!("{}: {e}", path.display()));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| file_err(&e))?;
    let headers = rdr.headers().map_err(|e| file_err(&e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in {}", path.display())))
    };
    let yi = find(response)?;
    let fi = factors.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;
    let ci = covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut groups = Vec::new();
    let mut cov = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |idx: usize, name: &str| -> Result<f64> {
            let raw = rec.get(idx).unwrap_or("");
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: column '{name}': cannot parse '{raw}' as a number")))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("line {line}: column '{name}': non-finite value '{raw}'")));
            }
            Ok(v)
        };
        y.push(num(yi, response)?);
        for (&idx, name) in ci.iter().zip(covariates) {
            cov.push(num(idx, name)?);
        }
        let levels = fi
            .iter()
            .zip(factors)
            .map(|(&idx, name)| match rec.get(idx) {
                Some(v) if !v.is_empty() => Ok(v.to_string()),
                _ => Err(Error::Data(format!("line {line}: column '{name}' is empty"))),
            })
            .collect::<Result<Vec<_>>>()?;
        groups.push(CellId::new(levels));
    }
    let n = y.len();
    let cov = DMatrix::from_row_slice(n, covariates.len(), &cov);
    AncovaDataset::new(y, groups, cov)?
        .with_factor_names(factors.to_vec())?
        .with_covariate_names(covariates.to_vec())
}

/// Read a contrast matrix: a `label` column followed by one column per cell.
///
/// When the cell columns are named after the cells they may come in any order;
/// otherwise they are taken positionally.
pub fn read_contrast_csv(path: &Path, cells: &[String]) -> Result<ContrastMatrix> {
    let file_err = |e: &dyn std::fmt::Display| Error::Io(format!("{}: {e}", path.display()));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| file_err(&e))?;
    let headers = rdr.headers().map_err(|e| file_err(&e))?.clone();
    let a = cells.len();
    if headers.len() != a + 1 {
        return Err(Error::InvalidContrast(format!(
            "contrast file has {} columns; expected a label column and {a} cell columns",
            headers.len()
        )));
    }
    let named: Option<Vec<usize>> = cells.iter().map(|c| headers.iter().skip(1).position(|h| h == c)).collect();
    let cols: Vec<usize> = named.unwrap_or_else(|| (0..a).collect());
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        labels.push(rec.get(0).unwrap_or("").to_string());
        for &j in &cols {
            let raw = rec.get(j + 1).unwrap_or("");
            let v: f64 =
                raw.parse().map_err(|_| Error::Data(format!("line {line}: cannot parse '{raw}' as a number")))?;
            values.push(v);
        }
    }
    let q = labels.len();
    ContrastMatrix::user_defined(DMatrix::from_row_slice(q, a, &values), labels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputSummary {
    pub file: String,
    pub n_obs: usize,
    pub response: String,
    pub factors: Vec<String>,
    pub covariates: Vec<String>,
    pub cells: Vec<CellSummary>,
}

/// Everything an analysis reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub tool: String,
    pub version: String,
    pub input: InputSummary,
    pub contrast_origin: String,
    pub method: Method,
    pub result: MctpResult,
}

pub fn run_analysis(cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    let data = read_dataset(&cfg.input, &cfg.response, &cfg.factors, &cfg.covariates)?;
    let design = build_design(&data)?;
    let cells = design.cell_labels();
    let (c, origin) = if let Some(path) = &cfg.contrast_file {
        (read_contrast_csv(path, &cells)?, "user_defined".to_string())
    } else if let Some(effect) = &cfg.effect {
        let layout = design.factor_layout()?;
        let base = cfg.contrast.unwrap_or(ContrastKind::GrandMean);
        (factorial_contrast(effect, &layout, base)?, "kronecker_composite".to_string())
    } else {
        let kind = cfg.contrast.unwrap_or(ContrastKind::Dunnett);
        (contrast(kind, design.n_cells())?.with_cell_labels(&cells)?, format!("{kind:?}").to_ascii_lowercase())
    };
    let fitted = fit(&design, cfg.variance_mode)?;
    let opts = MctpOptions {
        alpha: cfg.alpha,
        sidedness: if cfg.one_sided { Sidedness::Upper } else { Sidedness::TwoSided },
        qmc: QmcSettings { seed: cfg.seed, ..QmcSettings::default() },
        boot: BootstrapSettings { n_boot: cfg.n_boot, seed: cfg.seed },
        ..MctpOptions::default()
    };
    let result = mctp(&fitted, &c, &design, cfg.method, &opts)?;
    Ok(AnalysisReport {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        input: InputSummary {
            file: cfg.input.display().to_string(),
            n_obs: design.n_obs(),
            response: cfg.response.clone(),
            factors: cfg.factors.clone(),
            covariates: cfg.covariates.clone(),
            cells: cells.iter().zip(design.cell_sizes()).map(|(c, &n)| CellSummary { cell: c.clone(), n }).collect(),
        },
        contrast_origin: origin,
        method: cfg.method,
        result,
    })
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

impl AnalysisReport {
    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
                s.push('\n');
                Ok(s)
            }
            OutputFormat::Text => Ok(self.text()),
        }
    }

    fn text(&self) -> String {
        let r = &self.result;
        let mut out = String::new();
        let sided = match r.sidedness {
            Sidedness::TwoSided => "two-sided",
            Sidedness::Upper => "one-sided (greater)",
        };
        let _ = writeln!(out, "Multiple contrast test: {} ({} variances)", self.method, r.variance_mode);
        let _ = writeln!(
            out,
            "Data: {} observations in {} cells; response {}; covariates: {}",
            self.input.n_obs,
            self.input.cells.len(),
            self.input.response,
            if self.input.covariates.is_empty() { "none".to_string() } else { self.input.covariates.join(", ") }
        );
        let _ = writeln!(out, "alpha = {} ({sided})", r.alpha);
        if let Some(d) = &r.df_candidates {
            let v: Vec<String> = d.iter().map(|x| num(*x)).collect();
            let _ = writeln!(out, "df candidates: {}", v.join(", "));
        }
        if let Some(df) = r.df_used {
            let _ = writeln!(out, "df used: {df}");
        }
        if let crate::inference::MethodInfo::Bootstrap { n_boot, seed, degenerate_replicates, .. } = &r.method {
            let _ = writeln!(out, "bootstrap: {n_boot} Rademacher replicates, seed {seed}, {degenerate_replicates} degenerate");
        }
        let _ = writeln!(out, "critical value: {}", num(r.crit));
        let _ = writeln!(out);

        let header = ["Contrast", "Effect", "CI_Lower", "CI_Upper", "Test statistic", "p-value"];
        let rows: Vec<[String; 6]> = (0..r.contrasts.len())
            .map(|l| {
                [
                    r.contrasts[l].clone(),
                    num(r.effects[l]),
                    num(r.ci[l].lower),
                    num(r.ci[l].upper),
                    num(r.statistics[l]),
                    num(r.p_adj[l]),
                ]
            })
            .collect();
        let widths: Vec<usize> =
            (0..6).map(|j| rows.iter().map(|row| row[j].len()).chain([header[j].len()]).max().unwrap_or(0)).collect();
        let line = |cells: [&str; 6], marker: &str| {
            let mut s = format!("{:<w$}", cells[0], w = widths[0]);
            for j in 1..6 {
                let _ = write!(s, "  {:>w$}", cells[j], w = widths[j]);
            }
            s.push_str(marker);
            s
        };
        let _ = writeln!(out, "{}", line(header, ""));
        for (l, row) in rows.iter().enumerate() {
            let cells = [&*row[0], &*row[1], &*row[2], &*row[3], &*row[4], &*row[5]];
            let _ = writeln!(out, "{}", line(cells, if r.reject[l] { "  *" } else { "" }));
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Global test: max statistic {}, p-value {}, {}",
            num(r.global_stat),
            num(r.global_p),
            if r.global_reject { "reject" } else { "do not reject" }
        );
        for w in &r.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}
