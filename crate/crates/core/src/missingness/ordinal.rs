use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{category_probs, full_category_probs, occasion_jacobian, RegressionParams};
use crate::panel::indicator;

use super::logistic::{finished_cov, newton_step, SeparationPolicy, DRIFT, FLAT};

/// Cumulative-logit regression `logit P(O <= j | w) = a_j + w'b` fitted by maximum likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalFit {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Inverse Fisher information in the `(intercepts, slopes)` coordinates.
    pub cov: DMatrix<f64>,
    pub iterations: usize,
}

impl OrdinalFit {
    pub fn categories(&self) -> usize {
        self.intercepts.len() + 1
    }

    /// Probabilities of all J categories.
    pub fn probs(&self, w: &[f64]) -> Vec<f64> {
        let eta: f64 = self.slopes.iter().zip(w).map(|(b, x)| b * x).sum();
        full_category_probs(&self.intercepts, eta)
    }

    pub fn coef(&self) -> Vec<f64> {
        let mut v = self.intercepts.clone();
        v.extend_from_slice(&self.slopes);
        v
    }

    /// Same model at another coefficient vector; intercepts are sorted so the
    /// cumulative probabilities stay monotone.
    pub fn with_coef(&self, coef: &[f64]) -> Self {
        let k = self.intercepts.len();
        let mut intercepts = coef[..k].to_vec();
        intercepts.sort_by(f64::total_cmp);
        for m in 1..k {
            if intercepts[m] <= intercepts[m - 1] {
                intercepts[m] = intercepts[m - 1] + 1e-8;
            }
        }
        OrdinalFit {
            intercepts,
            slopes: coef[k..].to_vec(),
            ..self.clone()
        }
    }
}

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const DIVERGENCE: f64 = 40.0;

fn log_likelihood(design: &DMatrix<f64>, y: &[u8], intercepts: &[f64], slopes: &[f64]) -> f64 {
    design
        .row_iter()
        .zip(y)
        .map(|(row, &c)| {
            let eta: f64 = row.iter().zip(slopes).map(|(a, b)| a * b).sum();
            full_category_probs(intercepts, eta)[c as usize - 1].ln()
        })
        .sum()
}

/// Fisher scoring for the cumulative-logit model. `design` has no intercept
/// column; `y` holds categories in `1..=categories`. Separation is an error.
pub fn fit_ordinal(design: &DMatrix<f64>, y: &[u8], categories: usize, model: &str) -> Result<OrdinalFit> {
    fit_ordinal_with(design, y, categories, model, SeparationPolicy::Fail)
}

pub fn fit_ordinal_with(
    design: &DMatrix<f64>,
    y: &[u8],
    categories: usize,
    model: &str,
    policy: SeparationPolicy,
) -> Result<OrdinalFit> {
    let tolerant = policy == SeparationPolicy::Tolerate;
    let (n, k) = design.shape();
    let jm = categories - 1;
    if n != y.len() || n == 0 {
        return Err(Error::InsufficientData(format!("no observations to fit {model}")));
    }
    let mut freq = vec![0.0; categories];
    for &c in y {
        if c == 0 || c as usize > categories {
            return Err(Error::InvalidParameter(format!("{model}: category {c} out of range")));
        }
        freq[c as usize - 1] += 1.0;
    }
    if freq.iter().any(|&f| f == 0.0) {
        return Err(Error::Separation { model: model.into() });
    }
    let mut cum = 0.0;
    let start: Vec<f64> = freq[..jm]
        .iter()
        .map(|f| {
            cum += f;
            (cum / (n as f64 - cum)).ln()
        })
        .collect();
    let mut beta = RegressionParams::new(start, 0.0, vec![0.0; k.saturating_sub(1)])
        .map_err(|e| Error::ModelFit(format!("{model}: {e}")))?;
    // RegressionParams carries one slot for x plus the rest; for k = 0 we drop it below.
    let slopes_of = |b: &RegressionParams| -> Vec<f64> {
        if k == 0 {
            Vec::new()
        } else {
            b.slopes()
        }
    };
    let p = jm + k;
    let rows: Vec<Vec<f64>> = design.row_iter().map(|r| r.iter().copied().collect()).collect();
    let obs: Vec<DVector<f64>> = y
        .iter()
        .map(|&c| indicator(c, categories))
        .collect::<Result<_>>()?;

    let information = |beta: &RegressionParams| {
        let slopes = slopes_of(beta);
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for (w, yv) in rows.iter().zip(&obs) {
            let eta: f64 = w.iter().zip(&slopes).map(|(a, b)| a * b).sum();
            let mu = category_probs(beta.intercepts(), eta);
            let d = occasion_jacobian(beta.intercepts(), eta, w);
            let last = (1.0 - mu.sum()).max(1e-12);
            // inverse multinomial covariance: diag(1/mu) + 11'/mu_J
            let vinv = DMatrix::from_fn(jm, jm, |a, b| (if a == b { 1.0 / mu[a] } else { 0.0 }) + 1.0 / last);
            let dv = d.transpose() * vinv;
            score += &dv * (yv - &mu);
            info += &dv * d;
        }
        (score, info)
    };
    let finish = |beta: &RegressionParams, info: &DMatrix<f64>, iterations: usize| -> Result<OrdinalFit> {
        Ok(OrdinalFit {
            intercepts: beta.intercepts().to_vec(),
            slopes: slopes_of(beta),
            cov: finished_cov(info, policy, model)?,
            iterations,
        })
    };

    let mut ll = log_likelihood(design, y, beta.intercepts(), &slopes_of(&beta));
    for iter in 0..MAX_ITER {
        let (score, info) = information(&beta);
        if score.amax() < SCORE_TOL {
            return finish(&beta, &info, iter);
        }
        let step = newton_step(&info, &score, policy, model)?;
        let step_full = if k == 0 {
            let mut s: Vec<f64> = step.iter().copied().collect();
            s.push(0.0);
            DVector::from_vec(s)
        } else {
            step
        };
        let mut scale = 1.0;
        let mut accepted = false;
        let previous = ll;
        for _ in 0..30 {
            if let Ok(cand) = beta.step(&step_full, scale) {
                let cll = log_likelihood(design, y, cand.intercepts(), &slopes_of(&cand));
                if cll.is_finite() && cll >= ll - 1e-10 * ll.abs() {
                    beta = cand;
                    ll = cll;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        let largest = beta.to_vec().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if tolerant {
            let flat = ll - previous <= FLAT * ll.abs().max(1.0);
            if !accepted || (flat && largest > DRIFT) {
                return finish(&beta, &information(&beta).1, iter + 1);
            }
        } else if !accepted || largest > DIVERGENCE {
            return Err(Error::Separation { model: model.into() });
        }
    }
    if tolerant {
        return finish(&beta, &information(&beta).1, MAX_ITER);
    }
    Err(Error::ModelFit(format!("{model}: Fisher scoring did not converge")))
}
