//! Estimators for the marginal cumulative-logit model: available-data GEE,
//! weighted GEE, multiple-imputation GEE and doubly robust GEE, with sandwich
//! covariances corrected for estimated nuisance models.

mod drgee;
mod engine;
mod fit;
mod gee;
mod mi;
mod sandwich;
mod wgee;

pub use drgee::{conditioning_pattern, dr_augmentation};
pub use engine::{MAX_HALVINGS, SCORE_TOL, STEP_TOL};
pub use fit::{
    coefficient_names, CoefficientRow, Diagnostics, FitOptions, FitResult, Method, ScoreCorrection, FIT_SCHEMA_VERSION,
};
pub use mi::mi_pool;
pub use sandwich::{corrected_scores, cross_product_projection, derivative_projection, robust_vcov};

use nalgebra::{DMatrix, DVector};

use crate::association::{AssociationEstimate, AssociationSpec};
use crate::error::{Error, Result};
use crate::missingness::{fcs_impute, MissingnessModels, ModelConfig, PredictiveModel, FCS_CYCLES};
use crate::model::RegressionParams;
use crate::panel::OrdinalPanel;
use crate::parallel::{map_indexed, Execution};

use drgee::{DrProblem, DrSettings};
use engine::{fisher_scoring, initial_params, Evaluation, Problem, Scoring};
use gee::GeeProblem;
use wgee::WgeeProblem;

/// Fit `method` with working association `spec`. Nuisance models are specified
/// by `config` (ignored by available-data GEE). Failure of the estimating
/// equations to converge is reported through [`FitResult::converged`]; errors
/// are reserved for invalid input and nuisance models that cannot be fitted.
pub fn fit(
    panel: &OrdinalPanel,
    method: Method,
    spec: AssociationSpec,
    config: &ModelConfig,
    options: &FitOptions,
) -> Result<FitResult> {
    if method.needs_models() {
        config.validate(panel.q())?;
    }
    match method {
        Method::Gee => fit_gee(panel, spec, options),
        Method::Wgee => fit_wgee(panel, spec, config, options),
        Method::Migee => fit_migee(panel, spec, config, options),
        Method::Drgee => fit_drgee(panel, spec, config, options),
    }
}

/// Starting value, then Fisher scoring. Structured fits start from the
/// independence fit of the same estimating equations when it converges.
fn run<P: Problem>(
    problem: &P,
    independence: impl FnOnce() -> P,
    panel: &OrdinalPanel,
    spec: AssociationSpec,
    options: &FitOptions,
) -> Result<Scoring> {
    let start = match &options.start {
        Some(s) => s.clone(),
        None => {
            let init = initial_params(panel)?;
            if spec.is_independence() {
                init
            } else {
                let warm = fisher_scoring(&independence(), init.clone(), options.max_iter);
                if warm.converged {
                    warm.beta
                } else {
                    init
                }
            }
        }
    };
    Ok(fisher_scoring(problem, start, options.max_iter))
}

type Corrections = Vec<(DMatrix<f64>, Vec<DVector<f64>>)>;

fn failed(method: Method, spec: AssociationSpec, panel: &OrdinalPanel, message: String) -> Result<FitResult> {
    let beta = initial_params(panel)?;
    let p = beta.dim();
    Ok(FitResult {
        method,
        association: spec,
        beta,
        alpha: AssociationEstimate::Independence,
        vcov: DMatrix::from_element(p, p, f64::NAN),
        converged: false,
        iterations: 0,
        score_norm: f64::NAN,
        n: panel.n(),
        diagnostics: Diagnostics {
            failure: Some(message),
            ..Diagnostics::default()
        },
        trace: Vec::new(),
    })
}

fn assemble(
    method: Method,
    spec: AssociationSpec,
    panel: &OrdinalPanel,
    scoring: Scoring,
    corrections: impl FnOnce(&RegressionParams, &Evaluation) -> Result<(Corrections, bool)>,
    mut diagnostics: Diagnostics,
) -> Result<FitResult> {
    let Some(ev) = &scoring.evaluation else {
        return failed(method, spec, panel, scoring.failure.unwrap_or_else(|| "evaluation failed".into()));
    };
    let p = scoring.beta.dim();
    let mut converged = scoring.converged;
    diagnostics.halvings = scoring.halvings;
    diagnostics.newton_steps = scoring.newton_steps;
    diagnostics.max_shrinkage = ev.max_shrinkage;
    diagnostics.shrunk_subjects = ev.shrunk;
    diagnostics.failure = scoring.failure.clone();
    let vcov = match corrections(&scoring.beta, ev) {
        Ok((list, pinv)) => {
            diagnostics.pseudo_inverse = pinv;
            let q = corrected_scores(&ev.scores, &list);
            robust_vcov(&ev.info, &q)
        }
        Err(e) => {
            diagnostics.failure = Some(format!("covariance correction failed: {e}"));
            None
        }
    };
    let vcov = vcov.unwrap_or_else(|| {
        converged = false;
        diagnostics.failure.get_or_insert_with(|| "singular information matrix".into());
        DMatrix::from_element(p, p, f64::NAN)
    });
    Ok(FitResult {
        method,
        association: spec,
        beta: scoring.beta.clone(),
        alpha: ev.alpha.clone(),
        vcov,
        converged,
        iterations: scoring.iterations,
        score_norm: ev.norm(),
        n: panel.n(),
        diagnostics,
        trace: scoring.trace,
    })
}

fn fit_gee(panel: &OrdinalPanel, spec: AssociationSpec, options: &FitOptions) -> Result<FitResult> {
    let problem = GeeProblem::new(panel, spec, options.denominator)?;
    let scoring = run(&problem, || problem.independence(), panel, spec, options)?;
    let diagnostics = Diagnostics {
        dropped_subjects: problem.dropped(),
        ..Diagnostics::default()
    };
    assemble(Method::Gee, spec, panel, scoring, |_, _| Ok((Vec::new(), false)), diagnostics)
}

/// Central-difference derivative of the summed estimating function with respect
/// to a nuisance vector.
fn nuisance_derivative(center: &DVector<f64>, score_at: impl Fn(&DVector<f64>) -> Result<DVector<f64>>) -> Result<DMatrix<f64>> {
    let mut columns = Vec::with_capacity(center.len());
    for k in 0..center.len() {
        let h = 1e-5 * center[k].abs().max(1.0);
        let mut up = center.clone();
        up[k] += h;
        let mut down = center.clone();
        down[k] -= h;
        columns.push((score_at(&up)? - score_at(&down)?) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&columns))
}

fn fit_wgee(panel: &OrdinalPanel, spec: AssociationSpec, config: &ModelConfig, options: &FitOptions) -> Result<FitResult> {
    let models = MissingnessModels::fit(panel, config)?;
    let floor = config.weight_floor;
    let problem = WgeeProblem::new(panel, spec, options.denominator, &models, floor)?;
    let scoring = run(&problem, || problem.independence(), panel, spec, options)?;
    let diagnostics = Diagnostics {
        truncated_weights: problem.weights.truncated,
        dropped_subjects: problem.dropped(),
        ..Diagnostics::default()
    };
    assemble(
        Method::Wgee,
        spec,
        panel,
        scoring,
        |beta, ev| {
            if models.is_degenerate() {
                return Ok((Vec::new(), false));
            }
            let s2 = models.subject_scores(panel);
            let (proj, pinv) = match options.correction {
                ScoreCorrection::CrossProducts => cross_product_projection(&ev.scores, &s2),
                ScoreCorrection::FiniteDifference => {
                    let deriv = nuisance_derivative(&models.psi(), |psi| {
                        let p = WgeeProblem::new(panel, spec, options.denominator, &models.with_psi(psi), floor)?;
                        Ok(p.evaluate(beta)?.score)
                    })?;
                    derivative_projection(&deriv, &models.information())
                }
            };
            Ok((vec![(proj, s2)], pinv))
        },
        diagnostics,
    )
}

fn fit_drgee(panel: &OrdinalPanel, spec: AssociationSpec, config: &ModelConfig, options: &FitOptions) -> Result<FitResult> {
    let models = MissingnessModels::fit(panel, config)?;
    let predictive = if panel.has_missing() {
        Some(PredictiveModel::fit(panel, config)?)
    } else {
        None
    };
    let settings = DrSettings {
        omega: config.omega,
        floor: config.weight_floor,
        cap: config.completion_cap,
        draws: config.mc_draws,
        seed: options.seed,
    };
    let problem = DrProblem::new(panel, spec, options.denominator, &models, predictive.as_ref(), settings)?;
    let scoring = run(&problem, || problem.independence(), panel, spec, options)?;
    let diagnostics = Diagnostics {
        truncated_weights: problem.truncated(),
        mc_fallbacks: problem.mc_fallbacks(),
        ..Diagnostics::default()
    };
    assemble(
        Method::Drgee,
        spec,
        panel,
        scoring,
        |beta, ev| {
            let mut list = Vec::new();
            let mut any_pinv = false;
            if !models.is_degenerate() {
                let s2 = models.subject_scores(panel);
                let (proj, pinv) = match options.correction {
                    ScoreCorrection::CrossProducts => cross_product_projection(&ev.scores, &s2),
                    ScoreCorrection::FiniteDifference => {
                        let deriv = nuisance_derivative(&models.psi(), |psi| {
                            let p = DrProblem::new(
                                panel,
                                spec,
                                options.denominator,
                                &models.with_psi(psi),
                                predictive.as_ref(),
                                settings,
                            )?;
                            Ok(p.evaluate(beta)?.score)
                        })?;
                        derivative_projection(&deriv, &models.information())
                    }
                };
                any_pinv |= pinv;
                list.push((proj, s2));
            }
            // The covariate model does not index the distribution the estimating
            // function is unbiased under, so the cross-product shortcut does not
            // apply to it; its cross matrix is always the mean derivative.
            if let Some(pred) = predictive.as_ref().filter(|p| p.covariate.is_some()) {
                let s3 = pred.covariate_scores(panel);
                let cov = pred.covariate.as_ref().expect("filtered above");
                let deriv = nuisance_derivative(&cov.fit.coef, |gamma| {
                    let shifted = pred.with_gamma(gamma);
                    let p = DrProblem::new(panel, spec, options.denominator, &models, Some(&shifted), settings)?;
                    Ok(p.evaluate(beta)?.score)
                })?;
                let (proj, pinv) = derivative_projection(&deriv, &cov.fit.info);
                any_pinv |= pinv;
                list.push((proj, s3));
            }
            Ok((list, any_pinv))
        },
        diagnostics,
    )
}

fn fit_migee(panel: &OrdinalPanel, spec: AssociationSpec, config: &ModelConfig, options: &FitOptions) -> Result<FitResult> {
    if options.imputations < 2 {
        return Err(Error::Config(format!(
            "multiple imputation needs at least 2 imputations, got {}",
            options.imputations
        )));
    }
    let imputed = fcs_impute(panel, config, options.imputations, FCS_CYCLES, options.seed)?;
    let inner = FitOptions {
        execution: Execution::Sequential,
        ..options.clone()
    };
    let fits: Vec<FitResult> = map_indexed(options.execution, imputed.len(), |m| {
        fit_gee(&imputed[m], spec, &inner)
    })
    .into_iter()
    .filter_map(Result::ok)
    .collect();
    match mi_pool(&fits) {
        Ok(mut pooled) => {
            pooled.method = Method::Migee;
            pooled.n = panel.n();
            pooled.diagnostics.imputations = options.imputations;
            Ok(pooled)
        }
        Err(e) => {
            let mut out = failed(Method::Migee, spec, panel, e.to_string())?;
            out.diagnostics.imputations = options.imputations;
            Ok(out)
        }
    }
}
