//! Cumulative-logit (proportional odds) marginal mean model.
//!
//! `logit P(O <= j) = b0_j + w'b` for j = 1..J-1, where `w` stacks the baseline
//! covariate and the occasion's time-varying covariates. Category probabilities
//! are differences of consecutive cumulative probabilities; category J is the
//! reference level and is dropped from the mean vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_CLAMP: f64 = 1e-12;

/// Numerically stable logistic function.
pub fn expit(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Regression coefficients `(b0_1..b0_{J-1}, b_x, b_z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionParams {
    intercepts: Vec<f64>,
    beta_x: f64,
    beta_z: Vec<f64>,
}

impl RegressionParams {
    pub fn new(intercepts: Vec<f64>, beta_x: f64, beta_z: Vec<f64>) -> Result<Self> {
        check_intercepts(&intercepts)?;
        if !beta_x.is_finite() || beta_z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite slope".into()));
        }
        Ok(RegressionParams {
            intercepts,
            beta_x,
            beta_z,
        })
    }

    /// Rebuild from the flat layout `[intercepts, beta_x, beta_z]`.
    pub fn from_slice(values: &[f64], categories: usize) -> Result<Self> {
        let k = categories - 1;
        if values.len() < k + 1 {
            return Err(Error::InvalidParameter(format!(
                "parameter vector of length {} is too short for {categories} categories",
                values.len()
            )));
        }
        Self::new(values[..k].to_vec(), values[k], values[k + 1..].to_vec())
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn beta_x(&self) -> f64 {
        self.beta_x
    }

    pub fn beta_z(&self) -> &[f64] {
        &self.beta_z
    }

    pub fn categories(&self) -> usize {
        self.intercepts.len() + 1
    }

    pub fn dim(&self) -> usize {
        self.intercepts.len() + 1 + self.beta_z.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.intercepts.clone();
        v.push(self.beta_x);
        v.extend_from_slice(&self.beta_z);
        v
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_vec(self.to_vec())
    }

    /// Slopes `(b_x, b_z)` as a single vector.
    pub fn slopes(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.beta_z.len());
        v.push(self.beta_x);
        v.extend_from_slice(&self.beta_z);
        v
    }

    /// Linear predictor contribution `x b_x + z'b_z`.
    pub fn eta(&self, x: f64, z: &[f64]) -> f64 {
        x * self.beta_x + z.iter().zip(&self.beta_z).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Unconstrained coordinates: `b0_1`, then log increments, then slopes.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut u = unconstrain_intercepts(&self.intercepts);
        u.extend(self.slopes());
        u
    }

    pub fn from_unconstrained(u: &[f64], categories: usize) -> Result<Self> {
        let k = categories - 1;
        let intercepts = constrain_intercepts(&u[..k]);
        Self::new(intercepts, u[k], u[k + 1..].to_vec())
    }

    /// Apply a step `delta` (in the natural coordinates) scaled by `scale`,
    /// mapping it through the monotone reparametrization of the intercepts so the
    /// result always has strictly increasing intercepts.
    pub fn step(&self, delta: &DVector<f64>, scale: f64) -> Result<Self> {
        let k = self.intercepts.len();
        let mut u = self.to_unconstrained();
        let du = natural_step_to_unconstrained(&self.intercepts, delta.as_slice());
        for (a, d) in u.iter_mut().zip(&du) {
            *a += scale * d;
        }
        Self::from_unconstrained(&u, k + 1)
    }
}

fn check_intercepts(intercepts: &[f64]) -> Result<()> {
    if intercepts.is_empty() {
        return Err(Error::InvalidParameter("at least one intercept is required".into()));
    }
    if intercepts.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite intercept".into()));
    }
    if intercepts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(format!(
            "intercepts must be strictly increasing, got {intercepts:?}"
        )));
    }
    Ok(())
}

pub(crate) fn unconstrain_intercepts(b: &[f64]) -> Vec<f64> {
    let mut u = Vec::with_capacity(b.len());
    u.push(b[0]);
    for w in b.windows(2) {
        u.push((w[1] - w[0]).ln());
    }
    u
}

pub(crate) fn constrain_intercepts(u: &[f64]) -> Vec<f64> {
    let mut b = Vec::with_capacity(u.len());
    b.push(u[0]);
    for k in 1..u.len() {
        let prev = b[k - 1];
        b.push(prev + u[k].exp());
    }
    b
}

/// Map a step in natural coordinates to the unconstrained coordinates using the
/// first-order relation d(log inc_k) = d(inc_k) / inc_k.
pub(crate) fn natural_step_to_unconstrained(intercepts: &[f64], delta: &[f64]) -> Vec<f64> {
    let k = intercepts.len();
    let mut du = delta.to_vec();
    for m in 1..k {
        let inc = intercepts[m] - intercepts[m - 1];
        du[m] = (delta[m] - delta[m - 1]) / inc;
    }
    du
}

/// Cumulative probabilities `P(O <= j)` for j = 1..J-1, clamped away from 0 and 1.
pub fn cumulative_probs(intercepts: &[f64], eta: f64) -> Vec<f64> {
    intercepts
        .iter()
        .map(|b| expit(b + eta).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
        .collect()
}

/// Category probabilities for categories 1..J-1 given the linear predictor.
pub fn category_probs(intercepts: &[f64], eta: f64) -> DVector<f64> {
    let cum = cumulative_probs(intercepts, eta);
    let mut mu = DVector::zeros(cum.len());
    let mut prev = 0.0;
    for (j, c) in cum.iter().enumerate() {
        mu[j] = (c - prev).max(PROB_CLAMP);
        prev = *c;
    }
    mu
}

/// All J category probabilities (including the reference level).
pub fn full_category_probs(intercepts: &[f64], eta: f64) -> Vec<f64> {
    let mu = category_probs(intercepts, eta);
    let mut full: Vec<f64> = mu.iter().copied().collect();
    full.push((1.0 - mu.sum()).max(PROB_CLAMP));
    full
}

/// `mu_t` for a given parameter vector and covariates.
pub fn marginal_probs(beta: &RegressionParams, x: f64, z: &[f64]) -> Result<DVector<f64>> {
    check_intercepts(beta.intercepts())?;
    Ok(category_probs(beta.intercepts(), beta.eta(x, z)))
}

/// Jacobian of the (J-1) category probabilities with respect to
/// `(intercepts, slopes)` for covariate row `w` (so `eta = w'slopes`).
pub fn occasion_jacobian(intercepts: &[f64], eta: f64, w: &[f64]) -> DMatrix<f64> {
    let k = intercepts.len();
    let p = k + w.len();
    let deriv: Vec<f64> = intercepts
        .iter()
        .map(|b| {
            let g = expit(b + eta);
            g * (1.0 - g)
        })
        .collect();
    let mut d = DMatrix::zeros(k, p);
    for j in 0..k {
        d[(j, j)] += deriv[j];
        let mut slope = deriv[j];
        if j > 0 {
            d[(j, j - 1)] -= deriv[j - 1];
            slope -= deriv[j - 1];
        }
        for (c, wc) in w.iter().enumerate() {
            d[(j, k + c)] = slope * wc;
        }
    }
    d
}

/// Stacked Jacobian `D_i = d mu_i / d beta'` over a subject's occasions.
pub fn mean_jacobian(beta: &RegressionParams, x: f64, z: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    check_intercepts(beta.intercepts())?;
    let k = beta.intercepts().len();
    let mut d = DMatrix::zeros(z.len() * k, beta.dim());
    for (t, zt) in z.iter().enumerate() {
        let w = covariate_row(x, zt);
        let block = occasion_jacobian(beta.intercepts(), beta.eta(x, zt), &w);
        d.view_mut((t * k, 0), (k, beta.dim())).copy_from(&block);
    }
    Ok(d)
}

/// `(x, z_1, ..., z_q)`.
pub fn covariate_row(x: f64, z: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(z.len() + 1);
    w.push(x);
    w.extend_from_slice(z);
    w
}

/// Multinomial covariance `diag(mu) - mu mu'`.
pub fn occasion_cov_block(mu: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(mu) - mu * mu.transpose()
}

/// Marginal variances `mu_j (1 - mu_j)`.
pub fn variance_diag(mu: &DVector<f64>) -> DVector<f64> {
    mu.map(|m| m * (1.0 - m))
}
