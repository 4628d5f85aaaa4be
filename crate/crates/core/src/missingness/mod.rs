//! Missing-data coding, observation-probability models, weight matrices,
//! predictive completions for the doubly robust expectation, and chained-equation
//! multiple imputation.

mod config;
mod fcs;
mod logistic;
mod models;
mod ordinal;
mod predictive;

pub use config::{BaselinePredictor, HistoryPredictor, ImputationPredictor, ModelConfig};
pub use fcs::{fcs_impute, FCS_CYCLES};
pub use logistic::{fit_logistic, fit_logistic_with, logistic_scores, LogisticFit, SeparationPolicy};
pub use models::{
    build_weight_matrix, expand_weights, MissingnessModels, ObservationModel, ObservationProbs,
};
pub(crate) use models::require_complete_cases;
pub use ordinal::{fit_ordinal, fit_ordinal_with, OrdinalFit};
pub use predictive::{fit_covariate_model, Completion, CovariateModel, PredictiveModel};

use crate::panel::{MissingCode, OrdinalPanel};

/// Missing-data codes of every subject, aligned with its occasions.
pub fn encode_missingness(panel: &OrdinalPanel) -> Vec<Vec<MissingCode>> {
    panel.subjects().iter().map(|s| s.r_codes()).collect()
}
