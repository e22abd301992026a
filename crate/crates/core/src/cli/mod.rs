//! Command-line front end: `analyze` a CSV file or run a `simulate` config.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

mod analyze;
mod simulate;

pub use analyze::{read_contrast_csv, read_dataset, run_analysis, AnalysisConfig, AnalysisReport, OutputFormat};
pub use simulate::{run_simulation, SimulationRun};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ancova-mctp", version, about = "Multiple contrast tests for heteroscedastic ANCOVA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Test contrasts of cell effects in a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Run a simulation study described by a TOML file.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Default)]
pub struct AnalyzeArgs {
    /// TOML file with analysis settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV input, one row per subject.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub response: Option<String>,
    /// Factor column (repeat for several factors).
    #[arg(long = "factor")]
    pub factors: Vec<String>,
    /// Covariate column (repeat for several covariates).
    #[arg(long = "covariate")]
    pub covariates: Vec<String>,
    /// dunnett, tukey or grandmean.
    #[arg(long)]
    pub contrast: Option<String>,
    /// CSV with a label column and one column per cell.
    #[arg(long)]
    pub contrast_file: Option<PathBuf>,
    /// Factorial effect such as `dose` or `dose:sex`.
    #[arg(long)]
    pub effect: Option<String>,
    /// groupwise, subjectwise or homoscedastic.
    #[arg(long)]
    pub variance_mode: Option<String>,
    /// mvt-min, mvt-mean, mvt-max, normal or boot.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// text or json.
    #[arg(long)]
    pub format: Option<String>,
    /// Test `c'b > 0` instead of `c'b != 0`.
    #[arg(long)]
    pub one_sided: bool,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    /// Print the expanded settings without running them.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long, default_value = "sim-output")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n_sim: Option<usize>,
    #[arg(long)]
    pub n_boot: Option<usize>,
}

/// Parse arguments, run, print diagnostics; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(args) => {
            let cfg = AnalysisConfig::resolve(&args)?;
            let report = run_analysis(&cfg)?;
            let text = report.render(cfg.format)?;
            emit(&text, args.output.as_deref())
        }
        Command::Simulate(args) => {
            let run = run_simulation(&args.config, args.dry_run, &args.out_dir, args.n_sim, args.n_boot)?;
            emit(&run.summary, None)
        }
    }
}

fn emit(text: &str, path: Option<&std::path::Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::Io(e.to_string()))
        }
    }
}
