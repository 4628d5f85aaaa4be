use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::pinv_symmetric;
use crate::model::expit;

/// Maximum likelihood logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coef: DVector<f64>,
    /// Inverse Fisher information.
    pub cov: DMatrix<f64>,
    /// Fisher information at the estimate.
    pub info: DMatrix<f64>,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn prob(&self, row: &[f64]) -> f64 {
        expit(linear(&self.coef, row))
    }

    /// Same model evaluated at other coefficients.
    pub fn with_coef(&self, coef: DVector<f64>) -> Self {
        LogisticFit {
            coef,
            ..self.clone()
        }
    }
}

pub(crate) fn linear(coef: &DVector<f64>, row: &[f64]) -> f64 {
    coef.iter().zip(row).map(|(b, x)| b * x).sum()
}

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
/// A coefficient variance above this marks (quasi-)separation.
const MAX_VARIANCE: f64 = 1e6;
const DIVERGENCE: f64 = 40.0;
/// Coefficient size beyond which a tolerant fit may stop on a flat likelihood.
pub(crate) const DRIFT: f64 = 10.0;
/// Relative log-likelihood change treated as flat.
pub(crate) const FLAT: f64 = 1e-10;
/// Relative eigenvalue cut for the covariance of a separated fit.
pub(crate) const SEPARATED_RCOND: f64 = 1e-8;

/// Handling of (quasi-)separated data, where the likelihood has no finite maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeparationPolicy {
    /// Report a separation error.
    #[default]
    Fail,
    /// Iterate until the likelihood stops changing and keep the large
    /// coefficients; directions without information get zero variance.
    Tolerate,
}

fn log_likelihood(design: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // log(1 + exp(e)) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            yi * e - softplus
        })
        .sum()
}

/// Newton-Raphson fit of `logit P(y = 1) = design * coef`.
/// `model` names the fit in error messages. Separation is an error.
pub fn fit_logistic(design: &DMatrix<f64>, y: &[f64], model: &str) -> Result<LogisticFit> {
    fit_logistic_with(design, y, model, SeparationPolicy::Fail)
}

/// Covariance of a finished fit: the inverse information, or under
/// [`SeparationPolicy::Tolerate`] its truncated pseudo-inverse when the
/// information is (nearly) singular.
pub(crate) fn finished_cov(info: &DMatrix<f64>, policy: SeparationPolicy, model: &str) -> Result<DMatrix<f64>> {
    let cov = info.clone().cholesky().map(|c| c.inverse());
    match (cov, policy) {
        (Some(c), _) if c.diagonal().amax() <= MAX_VARIANCE => Ok(c),
        (_, SeparationPolicy::Tolerate) => Ok(pinv_symmetric(info, SEPARATED_RCOND)),
        _ => Err(Error::Separation { model: model.into() }),
    }
}

/// Newton step `info^{-1} grad`, through a pseudo-inverse for tolerant fits.
pub(crate) fn newton_step(
    info: &DMatrix<f64>,
    grad: &DVector<f64>,
    policy: SeparationPolicy,
    model: &str,
) -> Result<DVector<f64>> {
    match (info.clone().cholesky(), policy) {
        (Some(c), _) => Ok(c.solve(grad)),
        (None, SeparationPolicy::Tolerate) => Ok(pinv_symmetric(info, 1e-14) * grad),
        (None, SeparationPolicy::Fail) => Err(Error::Separation { model: model.into() }),
    }
}

pub fn fit_logistic_with(
    design: &DMatrix<f64>,
    y: &[f64],
    model: &str,
    policy: SeparationPolicy,
) -> Result<LogisticFit> {
    let (n, k) = design.shape();
    if n != y.len() {
        return Err(Error::InvalidParameter("design and outcome lengths differ".into()));
    }
    if n == 0 {
        return Err(Error::InsufficientData(format!("no observations to fit {model}")));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::Separation { model: model.into() });
    }
    let tolerant = policy == SeparationPolicy::Tolerate;
    let mut beta = DVector::zeros(k);
    let mut ll = log_likelihood(design, y, &beta);
    let information = |beta: &DVector<f64>| {
        let eta = design * beta;
        let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let resid = DVector::from_iterator(n, y.iter().zip(&p).map(|(yi, pi)| yi - pi));
        let grad = design.transpose() * resid;
        let mut weighted = design.clone();
        for (mut r, pi) in weighted.row_iter_mut().zip(&p) {
            r *= pi * (1.0 - pi);
        }
        (grad, design.transpose() * weighted)
    };
    let finish = |beta: DVector<f64>, info: DMatrix<f64>, iterations: usize| -> Result<LogisticFit> {
        Ok(LogisticFit {
            cov: finished_cov(&info, policy, model)?,
            coef: beta,
            info,
            iterations,
        })
    };
    for iter in 0..MAX_ITER {
        let (grad, info) = information(&beta);
        if grad.amax() < GRAD_TOL {
            return finish(beta, info, iter);
        }
        let step = newton_step(&info, &grad, policy, model)?;
        let mut scale = 1.0;
        let mut accepted = false;
        let previous = ll;
        for _ in 0..30 {
            let cand = &beta + &step * scale;
            let cll = log_likelihood(design, y, &cand);
            if cll.is_finite() && cll >= ll - 1e-10 * ll.abs() {
                beta = cand;
                ll = cll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if tolerant {
            let flat = ll - previous <= FLAT * ll.abs().max(1.0);
            if !accepted || (flat && beta.amax() > DRIFT) {
                let (_, info) = information(&beta);
                return finish(beta, info, iter + 1);
            }
        } else if !accepted || beta.amax() > DIVERGENCE {
            return Err(Error::Separation { model: model.into() });
        }
    }
    if tolerant {
        let (_, info) = information(&beta);
        return finish(beta, info, MAX_ITER);
    }
    Err(Error::ModelFit(format!("{model}: Newton iterations did not converge")))
}

/// Per-observation score contributions `(y - p) x`.
pub fn logistic_scores(design: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> Vec<DVector<f64>> {
    design
        .row_iter()
        .zip(y)
        .map(|(row, &yi)| {
            let r: Vec<f64> = row.iter().copied().collect();
            let p = expit(linear(coef, &r));
            DVector::from_vec(r) * (yi - p)
        })
        .collect()
}
