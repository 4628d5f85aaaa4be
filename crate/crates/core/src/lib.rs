//! Marginal cumulative-logit regression for longitudinal ordinal responses
//! with intermittently missing responses and a missing baseline covariate.

pub mod association;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod missingness;
pub mod model;
pub mod panel;
pub mod parallel;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
pub use model::RegressionParams;
pub use panel::{MissingCode, OrdinalPanel, SubjectRecord};
pub use parallel::Execution;
