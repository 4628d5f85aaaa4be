use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::config::{baseline_predictors, imputation_predictors, BaselinePredictor, ImputationPredictor, ModelConfig};
use super::logistic::{fit_logistic_with, logistic_scores, LogisticFit, SeparationPolicy};
use super::models::{baseline_row, to_matrix};
use super::ordinal::{fit_ordinal_with, OrdinalFit};
use crate::error::{Error, Result};
use crate::panel::{OrdinalPanel, SubjectRecord};

/// Logistic model for a binary baseline covariate given baseline predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateModel {
    pub predictors: Vec<BaselinePredictor>,
    pub fit: LogisticFit,
    categories: usize,
}

impl CovariateModel {
    /// Whether the model conditions on the first response.
    pub fn uses_first_response(&self) -> bool {
        self.predictors
            .iter()
            .any(|p| matches!(p, BaselinePredictor::Response | BaselinePredictor::ResponseCategories))
    }

    pub fn row(&self, first: Option<u8>, z0: &[f64]) -> Vec<f64> {
        baseline_row(&self.predictors, first, z0, self.categories)
    }

    /// P(X = 1 | predictors).
    pub fn prob_one(&self, first: Option<u8>, z0: &[f64]) -> f64 {
        self.fit.prob(&self.row(first, z0))
    }

    pub fn with_gamma(&self, gamma: &DVector<f64>) -> Self {
        CovariateModel {
            fit: self.fit.with_coef(gamma.clone()),
            ..self.clone()
        }
    }
}

/// Check that an observed covariate is coded 0/1.
fn binary_x(v: f64) -> Result<f64> {
    if v == 0.0 || v == 1.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!(
            "the covariate model needs a binary x coded 0/1; found {v}"
        )))
    }
}

/// Fit the covariate model on subjects with `x` observed (and any first
/// response it conditions on observed).
pub fn fit_covariate_model(panel: &OrdinalPanel, config: &ModelConfig) -> Result<CovariateModel> {
    let predictors = baseline_predictors(&config.covariate, panel.q())?;
    let uses_first = predictors
        .iter()
        .any(|p| matches!(p, BaselinePredictor::Response | BaselinePredictor::ResponseCategories));
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for s in panel.subjects() {
        let Some(x) = s.x else { continue };
        let first = s.responses[0].filter(|_| s.occasions[0] == 0);
        if uses_first && first.is_none() {
            continue;
        }
        rows.push(baseline_row(&predictors, first, &s.z[0], panel.categories()));
        y.push(binary_x(x)?);
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("no complete cases for the covariate model".into()));
    }
    let fit = fit_logistic_with(&to_matrix(&rows), &y, "covariate model", SeparationPolicy::Tolerate)?;
    Ok(CovariateModel {
        predictors,
        fit,
        categories: panel.categories(),
    })
}

/// One full assignment of a subject's missing components with its conditional probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub x: f64,
    /// Responses from the first occasion on; observed ones untouched.
    pub responses: Vec<u8>,
    pub weight: f64,
}

/// Covariate and per-occasion response models whose product gives the joint
/// distribution of a subject's missing components given the observed ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveModel {
    pub covariate: Option<CovariateModel>,
    /// One cumulative-logit model per occasion.
    pub responses: Vec<OrdinalFit>,
    predictors: Vec<ImputationPredictor>,
    categories: usize,
    occasions: usize,
    q: usize,
}

impl PredictiveModel {
    pub fn fit(panel: &OrdinalPanel, config: &ModelConfig) -> Result<Self> {
        if !panel.is_balanced() {
            return Err(Error::Config(
                "predictive and imputation models need every subject to have a row for every occasion".into(),
            ));
        }
        let predictors = imputation_predictors(&config.imputation, panel.q())?;
        let covariate = if panel.any_missing_x() {
            Some(fit_covariate_model(panel, config)?)
        } else {
            None
        };
        let x_after_first = covariate.as_ref().is_some_and(CovariateModel::uses_first_response);
        let j = panel.categories();
        let t_count = panel.occasions();
        let mut responses = Vec::with_capacity(t_count);
        for t in 0..t_count {
            let uses_x = predictors.contains(&ImputationPredictor::X) && !(t == 0 && x_after_first);
            let uses_history = predictors.contains(&ImputationPredictor::ResponseHistory);
            let mut rows = Vec::new();
            let mut y = Vec::new();
            for s in panel.subjects() {
                let Some(o) = s.responses[t] else { continue };
                if uses_x && s.x.is_none() {
                    continue;
                }
                if uses_history && s.responses[..t].iter().any(Option::is_none) {
                    continue;
                }
                let hist: Vec<u8> = s.responses[..t].iter().map(|r| r.unwrap_or(1)).collect();
                rows.push(response_row(&predictors, uses_x, s.x.unwrap_or(0.0), &hist, &s.z, t, j));
                y.push(o);
            }
            let design = to_matrix(&rows);
            let design = if rows.is_empty() { DMatrix::zeros(0, 0) } else { design };
            responses.push(fit_ordinal_with(&design, &y, j, &format!("response model at occasion {}", t + 1), SeparationPolicy::Tolerate)?);
        }
        Ok(PredictiveModel {
            covariate,
            responses,
            predictors,
            categories: j,
            occasions: t_count,
            q: panel.q(),
        })
    }

    pub fn x_after_first(&self) -> bool {
        self.covariate.as_ref().is_some_and(CovariateModel::uses_first_response)
    }

    fn uses_x(&self, t: usize) -> bool {
        self.predictors.contains(&ImputationPredictor::X) && !(t == 0 && self.x_after_first())
    }

    pub fn with_gamma(&self, gamma: &DVector<f64>) -> Self {
        let mut out = self.clone();
        if let Some(c) = &self.covariate {
            out.covariate = Some(c.with_gamma(gamma));
        }
        out
    }

    /// Log joint probability of `x` and the responses at occasions
    /// `0..responses.len()`, up to terms constant across completions. The
    /// covariate term enters when `x` is being integrated over or when it
    /// depends on a first response that may vary.
    fn log_joint(&self, s: &SubjectRecord, x: f64, responses: &[u8], x_unknown: bool) -> f64 {
        let mut lp = 0.0;
        if x_unknown || self.x_after_first() {
            if let Some(c) = &self.covariate {
                let first = if self.x_after_first() { responses.first().copied() } else { None };
                let p1 = c.prob_one(first, &s.z[0]);
                lp += if x == 1.0 { p1 } else { 1.0 - p1 }.max(1e-300).ln();
            }
        }
        for t in 0..responses.len() {
            let w = response_row(&self.predictors, self.uses_x(t), x, &responses[..t], &s.z, t, self.categories);
            let probs = self.responses[t].probs(&w);
            lp += probs[responses[t] as usize - 1].max(1e-300).ln();
        }
        lp
    }

    /// Number of completions an exhaustive enumeration of the subject would need.
    pub fn completion_count(&self, s: &SubjectRecord) -> f64 {
        let known: Vec<bool> = s.responses.iter().map(Option::is_some).collect();
        self.conditional_count(&known, s.x.is_some())
    }

    fn conditional_count(&self, known: &[bool], x_known: bool) -> f64 {
        let missing = known.iter().filter(|k| !**k).count() as i32;
        let xs = if x_known { 1.0 } else { 2.0 };
        xs * (self.categories as f64).powi(missing)
    }

    fn check_unknown_x(&self, x_known: bool) -> Result<()> {
        if !x_known && self.covariate.is_none() {
            return Err(Error::Config("covariate model required for a missing x".into()));
        }
        Ok(())
    }

    /// Exhaustive enumeration of the subject's completions with normalized weights.
    pub fn enumerate(&self, s: &SubjectRecord) -> Result<Vec<Completion>> {
        let known: Vec<bool> = s.responses.iter().map(Option::is_some).collect();
        self.enumerate_given(s, &known, s.x.is_some())
    }

    /// Enumerate the joint distribution of `x` and the responses at occasions
    /// `0..known.len()` given the responses flagged in `known` (which must be
    /// observed) and, when `x_known`, the observed covariate.
    pub fn enumerate_given(&self, s: &SubjectRecord, known: &[bool], x_known: bool) -> Result<Vec<Completion>> {
        self.check_unknown_x(x_known)?;
        let x_options: Vec<f64> = if x_known {
            vec![s.x.ok_or_else(|| Error::InvalidParameter("x flagged known but missing".into()))?]
        } else {
            vec![0.0, 1.0]
        };
        let unknown: Vec<usize> = (0..known.len()).filter(|&k| !known[k]).collect();
        let j = self.categories;
        let mut base: Vec<u8> = Vec::with_capacity(known.len());
        for (k, &kn) in known.iter().enumerate() {
            base.push(if kn {
                s.responses[k].ok_or_else(|| Error::InvalidParameter("response flagged known but missing".into()))?
            } else {
                1
            });
        }
        let combos = j.pow(unknown.len() as u32);
        let mut out = Vec::with_capacity(x_options.len() * combos);
        for &x in &x_options {
            for code in 0..combos {
                let mut c = code;
                for &k in &unknown {
                    base[k] = (c % j) as u8 + 1;
                    c /= j;
                }
                out.push(Completion {
                    x,
                    responses: base.clone(),
                    weight: self.log_joint(s, x, &base, !x_known),
                });
            }
        }
        normalize_log_weights(&mut out);
        Ok(out)
    }

    /// Self-normalized importance sample of completions: missing components are
    /// drawn forward from their conditional models and observed components
    /// contribute their likelihood to the weight.
    pub fn sample<R: Rng + ?Sized>(&self, s: &SubjectRecord, draws: usize, rng: &mut R) -> Result<Vec<Completion>> {
        let known: Vec<bool> = s.responses.iter().map(Option::is_some).collect();
        self.sample_given(s, &known, s.x.is_some(), draws, rng)
    }

    /// Importance-sampling counterpart of [`PredictiveModel::enumerate_given`].
    pub fn sample_given<R: Rng + ?Sized>(
        &self,
        s: &SubjectRecord,
        known: &[bool],
        x_known: bool,
        draws: usize,
        rng: &mut R,
    ) -> Result<Vec<Completion>> {
        self.check_unknown_x(x_known)?;
        let mut out = Vec::with_capacity(draws);
        for _ in 0..draws {
            let mut resp: Vec<u8> = Vec::with_capacity(known.len());
            let mut x = s.x.unwrap_or(0.0);
            let mut lw = 0.0;
            let draw_x = |resp0: Option<u8>, rng: &mut R| -> f64 {
                let c = self.covariate.as_ref().expect("checked above");
                f64::from(u8::from(rng.random::<f64>() < c.prob_one(resp0, &s.z[0])))
            };
            if !x_known && !self.x_after_first() {
                x = draw_x(None, rng);
            }
            for t in 0..known.len() {
                let w = response_row(&self.predictors, self.uses_x(t), x, &resp, &s.z, t, self.categories);
                let probs = self.responses[t].probs(&w);
                if known[t] {
                    let o = s.responses[t].ok_or_else(|| Error::InvalidParameter("response flagged known but missing".into()))?;
                    lw += probs[o as usize - 1].max(1e-300).ln();
                    resp.push(o);
                } else {
                    resp.push(draw_category(&probs, rng));
                }
                if t == 0 && self.x_after_first() {
                    if x_known {
                        let c = self.covariate.as_ref().expect("x_after_first implies a covariate model");
                        let p1 = c.prob_one(Some(resp[0]), &s.z[0]);
                        lw += if x == 1.0 { p1 } else { 1.0 - p1 }.max(1e-300).ln();
                    } else {
                        x = draw_x(Some(resp[0]), rng);
                    }
                }
            }
            out.push(Completion {
                x,
                responses: resp,
                weight: lw,
            });
        }
        normalize_log_weights(&mut out);
        Ok(out)
    }

    /// Enumerate when the number of completions is at most `cap`, otherwise sample.
    /// The flag reports whether sampling was used.
    pub fn predictive_weights<R: Rng + ?Sized>(
        &self,
        s: &SubjectRecord,
        cap: usize,
        draws: usize,
        rng: &mut R,
    ) -> Result<(Vec<Completion>, bool)> {
        let known: Vec<bool> = s.responses.iter().map(Option::is_some).collect();
        self.conditional_weights(s, &known, s.x.is_some(), cap, draws, rng)
    }

    /// [`PredictiveModel::enumerate_given`] below the cap, [`PredictiveModel::sample_given`] above it.
    pub fn conditional_weights<R: Rng + ?Sized>(
        &self,
        s: &SubjectRecord,
        known: &[bool],
        x_known: bool,
        cap: usize,
        draws: usize,
        rng: &mut R,
    ) -> Result<(Vec<Completion>, bool)> {
        if self.conditional_count(known, x_known) <= cap as f64 {
            Ok((self.enumerate_given(s, known, x_known)?, false))
        } else {
            Ok((self.sample_given(s, known, x_known, draws, rng)?, true))
        }
    }

    /// Per-subject score contributions of the covariate model (zero for subjects
    /// outside its fitting set).
    pub fn covariate_scores(&self, panel: &OrdinalPanel) -> Vec<DVector<f64>> {
        let Some(c) = &self.covariate else {
            return vec![DVector::zeros(0); panel.n()];
        };
        let k = c.fit.coef.len();
        panel
            .subjects()
            .iter()
            .map(|s| {
                let first = s.responses[0].filter(|_| s.occasions[0] == 0);
                match s.x {
                    Some(x) if !(c.uses_first_response() && first.is_none()) => {
                        let row = c.row(first, &s.z[0]);
                        logistic_scores(&to_matrix(&[row]), &[x], &c.fit.coef).remove(0)
                    }
                    _ => DVector::zeros(k),
                }
            })
            .collect()
    }

    pub fn q(&self) -> usize {
        self.q
    }
}

fn normalize_log_weights(list: &mut [Completion]) {
    let max = list.iter().map(|c| c.weight).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for c in list.iter_mut() {
        c.weight = (c.weight - max).exp();
        total += c.weight;
    }
    for c in list.iter_mut() {
        c.weight /= total;
    }
}

pub(crate) fn draw_category<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> u8 {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as u8 + 1;
        }
    }
    probs.len() as u8
}

/// Covariate row of the response model at occasion `t` given earlier responses `hist`.
pub(crate) fn response_row(
    preds: &[ImputationPredictor],
    uses_x: bool,
    x: f64,
    hist: &[u8],
    z: &[Vec<f64>],
    t: usize,
    categories: usize,
) -> Vec<f64> {
    let mut row = Vec::new();
    for p in preds {
        match p {
            ImputationPredictor::X => {
                if uses_x {
                    row.push(x);
                }
            }
            ImputationPredictor::AllZ => row.extend_from_slice(&z[t]),
            ImputationPredictor::Z(k) => row.push(z[t][*k]),
            ImputationPredictor::ZHistory => {
                for zs in &z[..t] {
                    row.extend_from_slice(zs);
                }
            }
            ImputationPredictor::ResponseHistory => {
                for &o in &hist[..t] {
                    for j in 1..categories {
                        row.push(f64::from(u8::from(o as usize == j)));
                    }
                }
            }
        }
    }
    row
}
