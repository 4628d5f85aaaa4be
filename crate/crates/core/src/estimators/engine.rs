use nalgebra::{DMatrix, DVector};

use crate::association::{assemble_working_covariance, regularized_inverse, AssociationEstimate};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, solve};
use crate::model::{category_probs, covariate_row, occasion_jacobian, RegressionParams};
use crate::panel::{indicator, OrdinalPanel, SubjectRecord};

/// Max-norm tolerance on the estimating function.
pub const SCORE_TOL: f64 = 1e-8;
/// Max-norm tolerance on the parameter change of the last step.
pub const STEP_TOL: f64 = 1e-6;
pub const MAX_HALVINGS: usize = 10;

/// Estimating function and its negative Jacobian at one parameter value.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub alpha: AssociationEstimate,
    pub score: DVector<f64>,
    /// `-dU/dbeta'` (Fisher-scoring approximation); not necessarily symmetric.
    pub info: DMatrix<f64>,
    /// Per-subject contributions, aligned with the panel's subjects.
    pub scores: Vec<DVector<f64>>,
    pub max_shrinkage: f64,
    pub shrunk: usize,
}

impl Evaluation {
    pub fn norm(&self) -> f64 {
        max_abs(&self.score)
    }
}

pub(crate) trait Problem {
    /// Working association implied by `beta`.
    fn association(&self, beta: &RegressionParams) -> Result<AssociationEstimate>;

    /// Estimating function at `beta` with the association held at `alpha`.
    fn evaluate_at(&self, beta: &RegressionParams, alpha: AssociationEstimate) -> Result<Evaluation>;

    fn evaluate(&self, beta: &RegressionParams) -> Result<Evaluation> {
        self.evaluate_at(beta, self.association(beta)?)
    }
}

/// Outcome of Fisher scoring; `evaluation` is the last successful one.
pub(crate) struct Scoring {
    pub beta: RegressionParams,
    pub evaluation: Option<Evaluation>,
    pub converged: bool,
    pub iterations: usize,
    pub halvings: usize,
    /// Iterations that fell back to a finite-difference Newton step.
    pub newton_steps: usize,
    pub trace: Vec<f64>,
    pub failure: Option<String>,
}

/// Fisher scoring with step halving: a step is accepted once the max-norm of the
/// estimating function, with the association re-estimated at the candidate,
/// decreases (or is already below tolerance). When no halving of the scoring
/// step is accepted, a Newton step on a finite-difference Jacobian of the same
/// function is tried before giving up; the information ignores how the working
/// covariance moves with `beta`, which matters when it is nearly singular.
pub(crate) fn fisher_scoring(problem: &dyn Problem, start: RegressionParams, max_iter: usize) -> Scoring {
    let mut out = Scoring {
        beta: start,
        evaluation: None,
        converged: false,
        iterations: 0,
        halvings: 0,
        newton_steps: 0,
        trace: Vec::new(),
        failure: None,
    };
    let mut current = match problem.evaluate(&out.beta) {
        Ok(e) => e,
        Err(e) => {
            out.failure = Some(e.to_string());
            return out;
        }
    };
    for iter in 0..max_iter {
        out.trace.push(current.norm());
        let Some(step) = solve(&current.info, &current.score) else {
            out.failure = Some("singular information matrix".into());
            break;
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for h in 0..=MAX_HALVINGS {
            if let Ok(cand) = out.beta.step(&step, scale) {
                if let Ok(e) = problem.evaluate(&cand) {
                    let n = e.norm();
                    if n.is_finite() && (n < current.norm() || n < SCORE_TOL) {
                        out.halvings += h;
                        accepted = Some((cand, e));
                        break;
                    }
                }
            }
            scale *= 0.5;
        }
        if accepted.is_none() {
            out.newton_steps += 1;
            accepted = newton_step(problem, &out.beta, &current);
        }
        let Some((cand, e)) = accepted else {
            out.failure = Some("step halving could not reduce the estimating function".into());
            out.halvings += MAX_HALVINGS;
            break;
        };
        let change = out
            .beta
            .to_vec()
            .iter()
            .zip(cand.to_vec())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        out.beta = cand;
        current = e;
        out.iterations = iter + 1;
        if current.norm() < SCORE_TOL && change < STEP_TOL {
            out.converged = true;
            break;
        }
    }
    if !out.converged && out.failure.is_none() {
        out.failure = Some(format!("no convergence within {max_iter} iterations"));
    }
    out.trace.push(current.norm());
    out.evaluation = Some(current);
    out
}

/// Mean model and inverse working covariance of one subject at the positions
/// `positions` (indices into the subject's rows) for covariate value `x`.
#[derive(Debug, Clone)]
pub(crate) struct SubjectBlock {
    pub positions: Vec<usize>,
    pub k: usize,
    /// Stacked Jacobian, `(positions * k) x p`.
    pub d: DMatrix<f64>,
    pub mu: Vec<DVector<f64>>,
    /// Inverse working covariance.
    pub w: DMatrix<f64>,
    pub shrinkage: f64,
}

impl SubjectBlock {
    pub fn new(
        beta: &RegressionParams,
        s: &SubjectRecord,
        x: f64,
        positions: &[usize],
        alpha: &AssociationEstimate,
    ) -> Result<Self> {
        let k = beta.intercepts().len();
        let p = beta.dim();
        let mut d = DMatrix::zeros(positions.len() * k, p);
        let mut mu = Vec::with_capacity(positions.len());
        for (m, &pos) in positions.iter().enumerate() {
            let z = &s.z[pos];
            let eta = beta.eta(x, z);
            mu.push(category_probs(beta.intercepts(), eta));
            let block = occasion_jacobian(beta.intercepts(), eta, &covariate_row(x, z));
            d.view_mut((m * k, 0), (k, p)).copy_from(&block);
        }
        let grid: Vec<usize> = positions.iter().map(|&pos| s.occasions[pos]).collect();
        let v = assemble_working_covariance(&grid, &mu, alpha)?;
        let inv = regularized_inverse(&v).map_err(|e| Error::ModelFit(format!("subject {}: {e}", s.id)))?;
        Ok(SubjectBlock {
            positions: positions.to_vec(),
            k,
            d,
            mu,
            w: inv.inverse,
            shrinkage: inv.shrinkage,
        })
    }

    /// Stacked `Y - mu`; positions in `skip` (or unobserved) get zeros.
    pub fn residual(&self, s: &SubjectRecord, categories: usize) -> Result<DVector<f64>> {
        let mut r = DVector::zeros(self.positions.len() * self.k);
        for (m, &pos) in self.positions.iter().enumerate() {
            if let Some(c) = s.responses[pos] {
                let y = indicator(c, categories)?;
                r.rows_mut(m * self.k, self.k).copy_from(&(y - &self.mu[m]));
            }
        }
        Ok(r)
    }
}

/// Running sums of per-subject contributions.
pub(crate) struct Accumulator {
    pub score: DVector<f64>,
    pub info: DMatrix<f64>,
    pub scores: Vec<DVector<f64>>,
    pub max_shrinkage: f64,
    pub shrunk: usize,
}

impl Accumulator {
    pub fn new(p: usize, n: usize) -> Self {
        Accumulator {
            score: DVector::zeros(p),
            info: DMatrix::zeros(p, p),
            scores: vec![DVector::zeros(p); n],
            max_shrinkage: 0.0,
            shrunk: 0,
        }
    }

    pub fn note_shrinkage(&mut self, eps: f64) {
        if eps > 0.0 {
            self.shrunk += 1;
            self.max_shrinkage = self.max_shrinkage.max(eps);
        }
    }

    pub fn add(&mut self, i: usize, score: DVector<f64>, info: &DMatrix<f64>) {
        self.score += &score;
        self.scores[i] += score;
        self.info += info;
    }

    pub fn finish(self, alpha: AssociationEstimate) -> Evaluation {
        Evaluation {
            alpha,
            score: self.score,
            info: self.info,
            scores: self.scores,
            max_shrinkage: self.max_shrinkage,
            shrunk: self.shrunk,
        }
    }
}

/// Starting values: intercepts at the logits of the pooled cumulative
/// proportions of the observed responses, slopes at zero.
pub(crate) fn initial_params(panel: &OrdinalPanel) -> Result<RegressionParams> {
    let j = panel.categories();
    let mut freq = vec![0.5; j];
    for s in panel.subjects() {
        for c in s.responses.iter().flatten() {
            freq[*c as usize - 1] += 1.0;
        }
    }
    let total: f64 = freq.iter().sum();
    let mut cum = 0.0;
    let intercepts = freq[..j - 1]
        .iter()
        .map(|f| {
            cum += f;
            (cum / (total - cum)).ln()
        })
        .collect();
    RegressionParams::new(intercepts, 0.0, vec![0.0; panel.q()])
}

/// Positions of a subject's rows with an observed response.
pub(crate) fn observed_positions(s: &SubjectRecord) -> Vec<usize> {
    (0..s.len()).filter(|&k| s.responses[k].is_some()).collect()
}

/// Newton step with halving on the central-difference Jacobian of the
/// estimating function at `beta`.
fn newton_step(problem: &dyn Problem, beta: &RegressionParams, current: &Evaluation) -> Option<(RegressionParams, Evaluation)> {
    let b0 = beta.to_vec();
    let categories = beta.intercepts().len() + 1;
    let mut cols = Vec::new();
    for k in 0..b0.len() {
        let h = 1e-6 * b0[k].abs().max(1.0);
        let mut up = b0.clone();
        up[k] += h;
        let mut dn = b0.clone();
        dn[k] -= h;
        let u = problem.evaluate(&RegressionParams::from_slice(&up, categories).ok()?).ok()?.score;
        let d = problem.evaluate(&RegressionParams::from_slice(&dn, categories).ok()?).ok()?.score;
        cols.push((u - d) / (2.0 * h));
    }
    let jac = DMatrix::from_columns(&cols);
    let step = solve(&(-jac), &current.score)?;
    let mut scale = 1.0;
    for _ in 0..=MAX_HALVINGS {
        if let Ok(cand) = beta.step(&step, scale) {
            if let Ok(e) = problem.evaluate(&cand) {
                let n = e.norm();
                if n.is_finite() && (n < current.norm() || n < SCORE_TOL) {
                    return Some((cand, e));
                }
            }
        }
        scale *= 0.5;
    }
    None
}
