use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::association::{AssociationEstimate, AssociationSpec, Denominator};
use crate::error::Error;
use crate::model::RegressionParams;
use crate::parallel::Execution;

/// Version of the JSON layout produced by [`FitResult::to_json`].
pub const FIT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Available-data GEE.
    Gee,
    /// Inverse-probability weighted GEE.
    Wgee,
    /// GEE on multiply imputed data sets, pooled.
    Migee,
    /// Doubly robust GEE.
    Drgee,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gee, Method::Wgee, Method::Migee, Method::Drgee];

    /// Whether the method needs fitted nuisance models from a model config.
    pub fn needs_models(self) -> bool {
        !matches!(self, Method::Gee)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Gee => "gee",
            Method::Wgee => "wgee",
            Method::Migee => "migee",
            Method::Drgee => "drgee",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gee" => Ok(Method::Gee),
            "wgee" => Ok(Method::Wgee),
            "migee" | "mi" => Ok(Method::Migee),
            "drgee" | "dr" => Ok(Method::Drgee),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// How the cross matrices of the corrected sandwich are obtained for the
/// missingness models. The covariate-model term of the doubly robust estimator
/// always uses the finite-difference derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScoreCorrection {
    /// Cross-products of per-subject scores (information equality).
    #[default]
    CrossProducts,
    /// Central finite differences of the estimating function in the nuisance parameters.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub denominator: Denominator,
    /// Starting value; by default an independence fit of the same method.
    pub start: Option<RegressionParams>,
    pub imputations: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub execution: Execution,
    pub correction: ScoreCorrection,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            denominator: Denominator::AdjustedPairs,
            start: None,
            imputations: 10,
            seed: 0,
            max_iter: 50,
            execution: Execution::Parallel,
            correction: ScoreCorrection::CrossProducts,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest shrinkage applied to a working covariance.
    pub max_shrinkage: f64,
    /// Subject evaluations that needed shrinkage at the final estimate.
    pub shrunk_subjects: usize,
    /// Observation probabilities raised to the weight floor.
    pub truncated_weights: usize,
    /// Subjects whose predictive expectation used Monte Carlo draws.
    pub mc_fallbacks: usize,
    /// A pseudo-inverse replaced a singular nuisance information.
    pub pseudo_inverse: bool,
    /// Step halvings performed by Fisher scoring.
    pub halvings: usize,
    /// Iterations that fell back to a finite-difference Newton step.
    pub newton_steps: usize,
    /// Subjects contributing nothing to the estimating equation.
    pub dropped_subjects: usize,
    pub imputations: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub method: Method,
    pub association: AssociationSpec,
    pub beta: RegressionParams,
    pub alpha: AssociationEstimate,
    /// Sandwich estimate of `Var(beta_hat)`.
    pub vcov: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the estimating function at the returned estimate.
    pub score_norm: f64,
    pub n: usize,
    pub diagnostics: Diagnostics,
    /// Max-norm of the estimating function at each Fisher-scoring iterate.
    pub trace: Vec<f64>,
}

/// Coefficient names `intercept1.., x, z1..`.
pub fn coefficient_names(categories: usize, q: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..categories).map(|j| format!("intercept{j}")).collect();
    names.push("x".into());
    names.extend((1..=q).map(|k| format!("z{k}")));
    names
}

/// One row of the coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

impl FitResult {
    pub fn std_errors(&self) -> Vec<f64> {
        self.vcov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        coefficient_names(self.beta.categories(), self.beta.beta_z().len())
    }

    pub fn coefficients(&self) -> Vec<CoefficientRow> {
        let normal = Normal::standard();
        self.names()
            .into_iter()
            .zip(self.beta.to_vec())
            .zip(self.std_errors())
            .map(|((name, estimate), std_error)| {
                let z = estimate / std_error;
                let p_value = if z.is_finite() { 2.0 * normal.sf(z.abs()) } else { f64::NAN };
                CoefficientRow {
                    name,
                    estimate,
                    std_error,
                    z,
                    p_value,
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let finite = |v: f64| if v.is_finite() { json!(v) } else { Value::Null };
        let coefficients: Vec<Value> = self
            .coefficients()
            .into_iter()
            .map(|c| {
                json!({
                    "name": c.name,
                    "estimate": finite(c.estimate),
                    "std_error": finite(c.std_error),
                    "z": finite(c.z),
                    "p_value": finite(c.p_value),
                })
            })
            .collect();
        json!({
            "schema_version": FIT_SCHEMA_VERSION,
            "method": self.method.to_string(),
            "association": self.association.to_string(),
            "converged": self.converged,
            "iterations": self.iterations,
            "score_norm": finite(self.score_norm),
            "n": self.n,
            "coefficients": coefficients,
            "alpha": self.alpha.alpha().into_iter().map(finite).collect::<Vec<_>>(),
            "diagnostics": serde_json::to_value(&self.diagnostics).unwrap_or(Value::Null),
            "trace": self.trace.iter().map(|&v| finite(v)).collect::<Vec<_>>(),
        })
    }

    /// Aligned text table: coefficient, estimate, standard error, p-value.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{} {}  n={}  converged={}  iterations={}\n",
            self.method, self.association, self.n, self.converged, self.iterations
        );
        out.push_str(&format!("{:<12} {:>10} {:>10} {:>10}\n", "", "Est.", "SE", "p"));
        for c in self.coefficients() {
            out.push_str(&format!(
                "{:<12} {:>10.4} {:>10.4} {:>10.4}\n",
                c.name, c.estimate, c.std_error, c.p_value
            ));
        }
        out
    }
}
