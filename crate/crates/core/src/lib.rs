//! Multiple contrast tests and simultaneous confidence intervals for ANCOVA models
//! with homoscedastic, group-wise or subject-specific error variances.
//!
//! The pipeline is `design` (cells, covariates, contrasts) -> `estimation`
//! (effects and sandwich covariances) -> `inference` (multivariate t or normal
//! critical values via `mvtdist`) or `bootstrap` (wild bootstrap). `simulation`
//! runs level and power studies; `cli` backs the `ancova-mctp` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod estimation;
mod linalg;
pub mod mvtdist;
pub mod inference;
pub mod bootstrap;
pub mod parallel;
pub mod simulation;
pub mod cli;

pub use error::{Error, Result};
