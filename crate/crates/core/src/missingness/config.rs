use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictor lists and tuning knobs for the nuisance models, read from JSON.
///
/// Token vocabulary:
/// - `missing_x` / `covariate` (baseline predictors): `baseline_response`
///   (first response, 0 when missing), `baseline_response_cat` (its category
///   dummies), `zK` (K-th covariate at the first occasion);
/// - `missing_y` (occasion t >= 2): `prev_response` (previous response, 0 when
///   missing), `prev_observed` (previous response observed), `zK` (current);
/// - `imputation` (response at occasion t): `x`, `z` (all current covariates),
///   `zK`, `z_history` (covariates at earlier occasions), `response_history`
///   (category dummies of earlier responses).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub missing_x: Vec<String>,
    pub missing_y: Vec<String>,
    pub covariate: Vec<String>,
    pub imputation: Vec<String>,
    pub omega: f64,
    pub mc_draws: usize,
    pub weight_floor: f64,
    pub completion_cap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        ModelConfig {
            missing_x: s(&["baseline_response", "z1"]),
            missing_y: s(&["prev_response", "prev_observed", "z1"]),
            covariate: s(&["baseline_response_cat", "z1"]),
            imputation: s(&["x", "z", "z_history", "response_history"]),
            omega: 0.5,
            mc_draws: 1000,
            weight_floor: 0.01,
            completion_cap: 100_000,
        }
    }
}

impl ModelConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.check_knobs()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn check_knobs(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config(format!("omega {} outside [0, 1]", self.omega)));
        }
        if !(0.0..1.0).contains(&self.weight_floor) {
            return Err(Error::Config(format!("weight_floor {} outside [0, 1)", self.weight_floor)));
        }
        if self.mc_draws == 0 || self.completion_cap == 0 {
            return Err(Error::Config("mc_draws and completion_cap must be positive".into()));
        }
        Ok(())
    }

    /// Parse all predictor lists against a panel with `q` covariates.
    pub fn validate(&self, q: usize) -> Result<()> {
        self.check_knobs()?;
        baseline_predictors(&self.missing_x, q)?;
        baseline_predictors(&self.covariate, q)?;
        history_predictors(&self.missing_y, q)?;
        imputation_predictors(&self.imputation, q)?;
        Ok(())
    }

    /// Drop `z1` from the model for observing the baseline covariate.
    pub fn without_z1_in_x_missingness(mut self) -> Self {
        self.missing_x.retain(|s| s != "z1");
        self
    }

    /// Drop `z1` from the covariate model.
    pub fn without_z1_in_covariate(mut self) -> Self {
        self.covariate.retain(|s| s != "z1");
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselinePredictor {
    Response,
    ResponseCategories,
    Z(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryPredictor {
    PrevResponse,
    PrevObserved,
    Z(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputationPredictor {
    X,
    AllZ,
    Z(usize),
    ZHistory,
    ResponseHistory,
}

fn z_index(token: &str, q: usize) -> Option<Result<usize>> {
    let k: usize = token.strip_prefix('z')?.parse().ok()?;
    Some(if k >= 1 && k <= q {
        Ok(k - 1)
    } else {
        Err(Error::Config(format!("covariate {token} does not exist (q = {q})")))
    })
}

pub fn baseline_predictors(tokens: &[String], q: usize) -> Result<Vec<BaselinePredictor>> {
    tokens
        .iter()
        .map(|t| match t.as_str() {
            "baseline_response" => Ok(BaselinePredictor::Response),
            "baseline_response_cat" => Ok(BaselinePredictor::ResponseCategories),
            other => match z_index(other, q) {
                Some(r) => r.map(BaselinePredictor::Z),
                None => Err(Error::Config(format!("unknown baseline predictor '{other}'"))),
            },
        })
        .collect()
}

pub fn history_predictors(tokens: &[String], q: usize) -> Result<Vec<HistoryPredictor>> {
    tokens
        .iter()
        .map(|t| match t.as_str() {
            "prev_response" => Ok(HistoryPredictor::PrevResponse),
            "prev_observed" => Ok(HistoryPredictor::PrevObserved),
            other => match z_index(other, q) {
                Some(r) => r.map(HistoryPredictor::Z),
                None => Err(Error::Config(format!("unknown response-missingness predictor '{other}'"))),
            },
        })
        .collect()
}

pub fn imputation_predictors(tokens: &[String], q: usize) -> Result<Vec<ImputationPredictor>> {
    tokens
        .iter()
        .map(|t| match t.as_str() {
            "x" => Ok(ImputationPredictor::X),
            "z" => Ok(ImputationPredictor::AllZ),
            "z_history" => Ok(ImputationPredictor::ZHistory),
            "response_history" => Ok(ImputationPredictor::ResponseHistory),
            other => match z_index(other, q) {
                Some(r) => r.map(ImputationPredictor::Z),
                None => Err(Error::Config(format!("unknown imputation predictor '{other}'"))),
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ModelConfig::default().validate(1).unwrap();
        assert!(ModelConfig::default().validate(0).is_err());
    }

    #[test]
    fn json_with_partial_keys_uses_defaults() {
        let cfg = ModelConfig::from_json_str(r#"{"omega": 0.25, "missing_x": ["z1"]}"#).unwrap();
        assert_eq!(cfg.omega, 0.25);
        assert_eq!(cfg.missing_x, vec!["z1"]);
        assert_eq!(cfg.mc_draws, 1000);
        assert!(ModelConfig::from_json_str(r#"{"omega": 2}"#).is_err());
        assert!(ModelConfig::from_json_str(r#"{"unknown": 1}"#).is_err());
    }

    #[test]
    fn misspecified_variants_drop_z1() {
        let c = ModelConfig::default().without_z1_in_x_missingness().without_z1_in_covariate();
        assert_eq!(c.missing_x, vec!["baseline_response"]);
        assert!(c.missing_y.contains(&"z1".to_string()));
        assert_eq!(c.covariate, vec!["baseline_response_cat"]);
    }
}
