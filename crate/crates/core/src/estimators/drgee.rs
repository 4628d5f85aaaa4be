//! Doubly robust GEE.
//!
//! The estimating function of a subject is
//!
//! `U = sum_ab Delta_ab h_ab + sum_ab (1 - Delta_ab) E[h_ab | F_b]`,
//!
//! with `h_ab = D_a' W_ab (Y_b - mu_b)` and `W = V^{-1}`. The weight `Delta_ab`
//! can only depend on what the missingness of occasion `b` depends on, so the
//! expectation conditions on `F_b`: the time-varying covariates, the responses
//! observed before occasion `b` and the first response when observed. The
//! baseline covariate is integrated over (its observation indicator is part of
//! `Delta`) unless no covariate value is missing in the data set. The first term
//! has mean zero when the observation probabilities are right; the second
//! corrects it to mean zero when the predictive model is right instead.

use nalgebra::{DMatrix, DVector};

use crate::association::{
    estimate_correlation_dr, pair_index, pearson_residuals, AssociationEstimate, AssociationSpec, CorrelationStructure,
    Denominator, PairExpectation,
};
use crate::error::{Error, Result};
use crate::missingness::{expand_weights, require_complete_cases, Completion, MissingnessModels, PredictiveModel};
use crate::model::{category_probs, variance_diag, RegressionParams};
use crate::panel::{indicator, OrdinalPanel, SubjectRecord};
use crate::rng::stream;

use super::engine::{Accumulator, Evaluation, Problem, SubjectBlock};
use super::gee::fixed_association;
use super::wgee::Weights;

/// Predictive distribution of one occasion's response for one covariate value.
#[derive(Debug, Clone)]
struct Slice {
    /// Index into the subject's covariate values.
    x: usize,
    /// Conditional probability of that covariate value.
    weight: f64,
    /// Conditional mean of the indicator vector.
    ey: DVector<f64>,
}

/// Predictive first and second moments of all indicators for one covariate value.
#[derive(Debug, Clone)]
struct Moments {
    x: usize,
    weight: f64,
    ey: Vec<DVector<f64>>,
    /// `E[Y_a Y_b']` for `a < b`, in [`pair_index`] order.
    eyy: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
struct DrSubject {
    xs: Vec<f64>,
    x_obs: Option<usize>,
    delta: DMatrix<f64>,
    /// Per position; empty when `1 - Delta` vanishes on that column.
    slices: Vec<Vec<Slice>>,
    moments: Vec<Moments>,
    mc: bool,
}

/// Responses the missingness of position `b` may depend on: the observed
/// responses before it and the first response when observed.
pub fn conditioning_pattern(s: &SubjectRecord, b: usize) -> Vec<bool> {
    (0..=b).map(|k| s.responses[k].is_some() && (k < b || k == 0)).collect()
}

fn x_index(xs: &[f64], x: f64) -> Result<usize> {
    xs.iter()
        .position(|&v| v == x)
        .ok_or_else(|| Error::Config(format!("covariate value {x} outside the enumerated support")))
}

fn occasion_slices(comps: &[Completion], xs: &[f64], b: usize, categories: usize) -> Result<Vec<Slice>> {
    let k = categories - 1;
    let mut out: Vec<Slice> = Vec::new();
    for c in comps {
        let xi = x_index(xs, c.x)?;
        let y = indicator(c.responses[b], categories)?;
        match out.iter_mut().find(|s| s.x == xi) {
            Some(s) => {
                s.weight += c.weight;
                s.ey += y * c.weight;
            }
            None => out.push(Slice {
                x: xi,
                weight: c.weight,
                ey: y * c.weight,
            }),
        }
    }
    out.retain(|s| s.weight > 0.0);
    for s in &mut out {
        s.ey /= s.weight;
        debug_assert_eq!(s.ey.len(), k);
    }
    Ok(out)
}

fn full_moments(comps: &[Completion], xs: &[f64], n: usize, categories: usize) -> Result<Vec<Moments>> {
    let k = categories - 1;
    let mut out: Vec<Moments> = Vec::new();
    for c in comps {
        let xi = x_index(xs, c.x)?;
        let ys: Vec<DVector<f64>> = c.responses.iter().map(|&o| indicator(o, categories)).collect::<Result<_>>()?;
        let idx = match out.iter().position(|m| m.x == xi) {
            Some(i) => i,
            None => {
                out.push(Moments {
                    x: xi,
                    weight: 0.0,
                    ey: vec![DVector::zeros(k); n],
                    eyy: vec![DMatrix::zeros(k, k); n * n.saturating_sub(1) / 2],
                });
                out.len() - 1
            }
        };
        let m = &mut out[idx];
        m.weight += c.weight;
        for a in 0..n {
            m.ey[a] += &ys[a] * c.weight;
            for b in a + 1..n {
                m.eyy[pair_index(a, b, n)] += &ys[a] * ys[b].transpose() * c.weight;
            }
        }
    }
    out.retain(|m| m.weight > 0.0);
    for m in &mut out {
        let w = m.weight;
        m.ey.iter_mut().for_each(|v| *v /= w);
        m.eyy.iter_mut().for_each(|v| *v /= w);
    }
    Ok(out)
}

struct Prep<'m> {
    model: Option<&'m PredictiveModel>,
    integrate_x: bool,
    categories: usize,
    cap: usize,
    draws: usize,
    seed: u64,
    moments: bool,
}

impl Prep<'_> {
    fn subject(&self, i: usize, s: &SubjectRecord, delta: DMatrix<f64>) -> Result<DrSubject> {
        let n = s.len();
        let xs = if self.integrate_x {
            vec![0.0, 1.0]
        } else {
            vec![s.x.ok_or_else(|| Error::InvalidParameter("covariate missing but not integrated".into()))?]
        };
        let x_obs = s.x.map(|x| x_index(&xs, x)).transpose()?;
        let mut mc = false;
        let mut slices = vec![Vec::new(); n];
        for (b, slot) in slices.iter_mut().enumerate() {
            if (0..n).all(|a| delta[(a, b)] == 1.0) {
                continue;
            }
            let model = self
                .model
                .ok_or_else(|| Error::Config("a predictive model is required when data are missing".into()))?;
            let known = conditioning_pattern(s, b);
            let mut rng = stream(self.seed, &[i as u64, b as u64]);
            let (comps, sampled) =
                model.conditional_weights(s, &known, !self.integrate_x, self.cap, self.draws, &mut rng)?;
            mc |= sampled;
            *slot = occasion_slices(&comps, &xs, b, self.categories)?;
        }
        let moments = match (self.moments, self.model) {
            (true, Some(model)) => {
                let mut rng = stream(self.seed, &[i as u64, n as u64]);
                let (comps, sampled) = model.predictive_weights(s, self.cap, self.draws, &mut rng)?;
                mc |= sampled;
                full_moments(&comps, &xs, n, self.categories)?
            }
            (true, None) => {
                let ys: Vec<u8> = s
                    .responses
                    .iter()
                    .map(|r| r.ok_or_else(|| Error::Config("a predictive model is required when data are missing".into())))
                    .collect::<Result<_>>()?;
                let comp = Completion {
                    x: s.x.unwrap_or(0.0),
                    responses: ys,
                    weight: 1.0,
                };
                full_moments(&[comp], &xs, n, self.categories)?
            }
            (false, _) => Vec::new(),
        };
        Ok(DrSubject {
            xs,
            x_obs,
            delta,
            slices,
            moments,
            mc,
        })
    }
}

/// Expected Pearson cross-products of a subject's occasion pairs.
fn expected_cross_products(beta: &RegressionParams, s: &SubjectRecord, sub: &DrSubject) -> Vec<PairExpectation> {
    let n = s.len();
    let k = beta.intercepts().len();
    let mut out: Vec<PairExpectation> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            out.push(PairExpectation {
                a,
                b,
                value: DMatrix::zeros(k, k),
            });
        }
    }
    for m in &sub.moments {
        let x = sub.xs[m.x];
        let mus: Vec<DVector<f64>> = (0..n).map(|t| category_probs(beta.intercepts(), beta.eta(x, &s.z[t]))).collect();
        let sd: Vec<DVector<f64>> = mus.iter().map(|mu| variance_diag(mu).map(f64::sqrt)).collect();
        for pe in &mut out {
            let (a, b) = (pe.a, pe.b);
            let raw = &m.eyy[pair_index(a, b, n)] - &m.ey[a] * mus[b].transpose() - &mus[a] * m.ey[b].transpose()
                + &mus[a] * mus[b].transpose();
            let scaled = DMatrix::from_fn(k, k, |r, c| raw[(r, c)] / (sd[a][r] * sd[b][c]));
            pe.value += scaled * m.weight;
        }
    }
    out
}

struct Contribution {
    main: DVector<f64>,
    augmentation: DVector<f64>,
    info: DMatrix<f64>,
    shrinkage: f64,
}

fn contribution(
    beta: &RegressionParams,
    s: &SubjectRecord,
    sub: &DrSubject,
    alpha: &AssociationEstimate,
    categories: usize,
) -> Result<Contribution> {
    let p = beta.dim();
    let n = s.len();
    let positions: Vec<usize> = (0..n).collect();
    let mut out = Contribution {
        main: DVector::zeros(p),
        augmentation: DVector::zeros(p),
        info: DMatrix::zeros(p, p),
        shrinkage: 0.0,
    };
    let observed_part = sub.x_obs.filter(|_| sub.delta.iter().any(|&v| v != 0.0));
    let needed: Vec<bool> = (0..sub.xs.len())
        .map(|xi| observed_part == Some(xi) || sub.slices.iter().flatten().any(|sl| sl.x == xi))
        .collect();
    let complement = sub.delta.map(|v| 1.0 - v);
    for (xi, &x) in sub.xs.iter().enumerate() {
        if !needed[xi] {
            continue;
        }
        let block = SubjectBlock::new(beta, s, x, &positions, alpha)?;
        out.shrinkage = out.shrinkage.max(block.shrinkage);
        let k = block.k;
        if observed_part == Some(xi) {
            let a = block.d.transpose() * block.w.component_mul(&expand_weights(&sub.delta, k));
            out.main += &a * block.residual(s, categories)?;
            out.info += &a * &block.d;
        }
        let b_mat = block.d.transpose() * block.w.component_mul(&expand_weights(&complement, k));
        for (b, list) in sub.slices.iter().enumerate() {
            for sl in list.iter().filter(|sl| sl.x == xi) {
                let cols = b_mat.columns(b * k, k);
                out.augmentation += (cols * (&sl.ey - &block.mu[b])) * sl.weight;
                out.info += (cols * block.d.rows(b * k, k)) * sl.weight;
            }
        }
    }
    Ok(out)
}

/// Augmentation term `sum_ab (1 - Delta_ab) E[h_ab | F_b]` of one subject,
/// computed by exhaustive enumeration of the predictive distribution.
/// `delta` is the occasion-level weight matrix of the subject.
pub fn dr_augmentation(
    s: &SubjectRecord,
    beta: &RegressionParams,
    alpha: &AssociationEstimate,
    delta: &DMatrix<f64>,
    model: &PredictiveModel,
    integrate_x: bool,
) -> Result<DVector<f64>> {
    let categories = beta.categories();
    let prep = Prep {
        model: Some(model),
        integrate_x,
        categories,
        cap: usize::MAX,
        draws: 1,
        seed: 0,
        moments: false,
    };
    let sub = prep.subject(0, s, delta.clone())?;
    Ok(contribution(beta, s, &sub, alpha, categories)?.augmentation)
}

/// Knobs of the doubly robust estimator.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DrSettings {
    pub omega: f64,
    pub floor: f64,
    pub cap: usize,
    pub draws: usize,
    pub seed: u64,
}

pub(crate) struct DrProblem<'a> {
    panel: &'a OrdinalPanel,
    spec: AssociationSpec,
    denominator: Denominator,
    omega: f64,
    fixed: Option<AssociationEstimate>,
    weights: Weights,
    subjects: Vec<DrSubject>,
}

impl<'a> DrProblem<'a> {
    pub fn new(
        panel: &'a OrdinalPanel,
        spec: AssociationSpec,
        denominator: Denominator,
        models: &MissingnessModels,
        predictive: Option<&PredictiveModel>,
        settings: DrSettings,
    ) -> Result<Self> {
        require_complete_cases(panel)?;
        let weights = Weights::new(panel, models, settings.floor);
        let prep = Prep {
            model: predictive,
            integrate_x: panel.any_missing_x(),
            categories: panel.categories(),
            cap: settings.cap,
            draws: settings.draws,
            seed: settings.seed,
            moments: matches!(spec, AssociationSpec::Correlation(c) if c != CorrelationStructure::Independence),
        };
        let subjects = panel
            .subjects()
            .iter()
            .enumerate()
            .map(|(i, s)| prep.subject(i, s, weights.deltas[i].clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DrProblem {
            panel,
            spec,
            denominator,
            omega: settings.omega,
            fixed: fixed_association(panel, spec)?,
            weights,
            subjects,
        })
    }

    pub fn independence(&self) -> Self {
        DrProblem {
            panel: self.panel,
            spec: AssociationSpec::independence(),
            denominator: self.denominator,
            omega: self.omega,
            fixed: Some(AssociationEstimate::Independence),
            weights: self.weights.clone(),
            subjects: self.subjects.clone(),
        }
    }

    pub fn truncated(&self) -> usize {
        self.weights.truncated
    }

    pub fn mc_fallbacks(&self) -> usize {
        self.subjects.iter().filter(|s| s.mc).count()
    }

}

impl Problem for DrProblem<'_> {
    fn association(&self, beta: &RegressionParams) -> Result<AssociationEstimate> {
        match (&self.fixed, self.spec) {
            (Some(a), _) => Ok(a.clone()),
            (None, AssociationSpec::Correlation(structure)) => {
                let expectations: Vec<Vec<PairExpectation>> = self
                    .panel
                    .subjects()
                    .iter()
                    .zip(&self.subjects)
                    .map(|(s, sub)| expected_cross_products(beta, s, sub))
                    .collect();
                estimate_correlation_dr(
                    &pearson_residuals(self.panel, beta)?,
                    &self.weights.pairs,
                    &expectations,
                    self.omega,
                    structure,
                    self.panel.occasions(),
                    beta.dim(),
                    self.denominator,
                )
            }
            (None, AssociationSpec::LocalOdds(_)) => unreachable!("local odds are fixed"),
        }
    }

    fn evaluate_at(&self, beta: &RegressionParams, alpha: AssociationEstimate) -> Result<Evaluation> {
        let subjects = self.panel.subjects();
        let mut acc = Accumulator::new(beta.dim(), subjects.len());
        for (i, (s, sub)) in subjects.iter().zip(&self.subjects).enumerate() {
            let c = contribution(beta, s, sub, &alpha, self.panel.categories())?;
            acc.note_shrinkage(c.shrinkage);
            acc.add(i, c.main + c.augmentation, &c.info);
        }
        Ok(acc.finish(alpha))
    }
}
