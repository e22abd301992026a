use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{default_sim_qmc, Alternative, CovariateSpec, ErrorLaw, SampleSizes, SimSetting, VarianceStructure};
use crate::design::ContrastKind;
use crate::error::{Error, Result};
use crate::inference::Method;
use crate::mvtdist::QmcSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Type1,
    Power,
}

/// Axes of the setting grid; every combination becomes one [`SimSetting`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub a: Vec<usize>,
    pub sizes: Vec<SampleSizes>,
    pub variance: Vec<VarianceStructure>,
    pub error_law: Vec<ErrorLaw>,
    pub contrast: Vec<ContrastKind>,
}

/// A simulation study read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub name: String,
    pub kind: StudyKind,
    pub methods: Vec<Method>,
    pub n_sim: usize,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub alternative: Option<Alternative>,
    #[serde(default)]
    pub shift_pattern: Option<Vec<f64>>,
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
    #[serde(default)]
    pub qmc: Option<QmcSettings>,
    #[serde(default)]
    pub covariates: Option<CovariateSpec>,
    pub grid: Grid,
}

fn default_n_boot() -> usize {
    1000
}
fn default_alpha() -> f64 {
    0.05
}

impl SimulationConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SimulationConfig = toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_sim == 0 {
            return bad("n_sim must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        let g = &self.grid;
        if g.a.is_empty() || g.sizes.is_empty() || g.variance.is_empty() || g.error_law.is_empty() || g.contrast.is_empty() {
            return bad("every grid axis needs at least one value");
        }
        match self.kind {
            StudyKind::Type1 => {
                if self.deltas.is_some() || self.alternative.is_some_and(|a| a != Alternative::Null) {
                    return bad("type1 studies take no deltas and no alternative");
                }
            }
            StudyKind::Power => {
                if self.deltas.as_ref().is_none_or(|d| d.is_empty()) {
                    return bad("power studies need a nonempty deltas list");
                }
                if self.alternative.is_none_or(|a| a == Alternative::Null) && self.shift_pattern.is_none() {
                    return bad("power studies need alternative = alt1 or alt2");
                }
            }
        }
        Ok(())
    }
}

/// All settings of the grid, in axis order (a, sizes, variance, error law, contrast).
pub fn expand_grid(cfg: &SimulationConfig) -> Result<Vec<SimSetting>> {
    cfg.validate()?;
    let g = &cfg.grid;
    let mut out = Vec::new();
    for &a in &g.a {
        for sizes in &g.sizes {
            for variance in &g.variance {
                for &error_law in &g.error_law {
                    for &contrast in &g.contrast {
                        let mut s = SimSetting::new(a, sizes.clone(), variance.clone(), error_law, contrast);
                        s.alternative = cfg.alternative.unwrap_or(Alternative::Null);
                        s.shift_pattern = cfg.shift_pattern.clone();
                        s.n_sim = cfg.n_sim;
                        s.n_boot = cfg.n_boot;
                        s.alpha = cfg.alpha;
                        s.master_seed = cfg.master_seed;
                        s.qmc = cfg.qmc.unwrap_or_else(default_sim_qmc);
                        if let Some(c) = &cfg.covariates {
                            s.covariates = c.clone();
                        }
                        if !cfg.name.is_empty() {
                            s.name = format!("{} #{}", cfg.name, out.len() + 1);
                        }
                        s.validate()?;
                        out.push(s);
                    }
                }
            }
        }
    }
    Ok(out)
}
