//! Two-factor analysis of the shipped synthetic trial: dose and sex main effects.

use std::path::Path;

use ancova_mctp::cli::{run_analysis, AnalysisConfig, AnalyzeArgs, OutputFormat};

fn main() -> ancova_mctp::Result<()> {
    let input = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/bun_synthetic.csv");
    for (effect, method, mode) in [("dose", "boot", "subjectwise"), ("dose", "mvt-min", "groupwise"), ("sex", "mvt-min", "groupwise")] {
        let args = AnalyzeArgs {
            input: Some(input.clone()),
            response: Some("bun_day90".into()),
            factors: vec!["dose".into(), "sex".into()],
            covariates: vec!["bun_baseline".into(), "weight_change".into()],
            effect: Some(effect.into()),
            method: Some(method.into()),
            variance_mode: Some(mode.into()),
            ..AnalyzeArgs::default()
        };
        let report = run_analysis(&AnalysisConfig::resolve(&args)?)?;
        println!("{}", report.render(OutputFormat::Text)?);
    }
    Ok(())
}
