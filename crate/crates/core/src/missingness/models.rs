use nalgebra::{DMatrix, DVector};

use super::config::{baseline_predictors, history_predictors, BaselinePredictor, HistoryPredictor, ModelConfig};
use super::logistic::{fit_logistic_with, logistic_scores, LogisticFit, SeparationPolicy};
use crate::association::PairWeights;
use crate::error::{Error, Result};
use crate::panel::{MissingCode, OrdinalPanel, SubjectRecord};

/// Design row for a baseline model (intercept first). The first response enters
/// as its category (0 when unobserved) or as category dummies.
pub(crate) fn baseline_row(preds: &[BaselinePredictor], first: Option<u8>, z0: &[f64], categories: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for p in preds {
        match p {
            BaselinePredictor::Response => row.push(first.map_or(0.0, f64::from)),
            BaselinePredictor::ResponseCategories => {
                for j in 1..categories {
                    row.push(f64::from(u8::from(first == Some(j as u8))));
                }
            }
            BaselinePredictor::Z(k) => row.push(z0[*k]),
        }
    }
    row
}

fn history_row(preds: &[HistoryPredictor], s: &SubjectRecord, k: usize) -> Vec<f64> {
    let prev = s.responses[k - 1];
    let mut row = vec![1.0];
    for p in preds {
        match p {
            HistoryPredictor::PrevResponse => row.push(prev.map_or(0.0, f64::from)),
            HistoryPredictor::PrevObserved => row.push(f64::from(u8::from(prev.is_some()))),
            HistoryPredictor::Z(c) => row.push(s.z[k][*c]),
        }
    }
    row
}

/// A fitted logistic model for an observation indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub fit: LogisticFit,
}

/// Logistic models for observing the baseline covariate (`x`), the responses
/// after the first occasion (`y`), and the first response (`first`, intercept
/// only). A model is `None` when nothing of that kind is missing, in which case
/// the corresponding observation probability is one.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessModels {
    x_predictors: Vec<BaselinePredictor>,
    y_predictors: Vec<HistoryPredictor>,
    categories: usize,
    pub x: Option<ObservationModel>,
    pub y: Option<ObservationModel>,
    pub first: Option<ObservationModel>,
}

/// Per-subject observation probabilities, indexed by the subject's positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationProbs {
    /// Probability of observing the baseline covariate.
    pub px: f64,
    /// Probability of observing each response given the observed history.
    pub py: Vec<f64>,
    /// `pi[a]` = P(R_a = 3).
    pub pi: Vec<f64>,
    /// `pair[(a, b)]` = P(R_a = 1, R_b = 3) + P(R_a = 3, R_b = 3); diagonal holds `pi`.
    pub pair: DMatrix<f64>,
    /// `joint[(a, b)]` = P(R_a = 3, R_b = 3); diagonal holds `pi`.
    pub joint: DMatrix<f64>,
    /// Number of probabilities raised to the floor.
    pub truncated: usize,
}

impl ObservationProbs {
    pub fn pair_weights(&self) -> PairWeights {
        PairWeights {
            pi: self.pi.clone(),
            joint: self.joint.clone(),
        }
    }
}

impl MissingnessModels {
    /// Models that declare everything observed with probability one.
    pub fn degenerate(categories: usize) -> Self {
        MissingnessModels {
            x_predictors: Vec::new(),
            y_predictors: Vec::new(),
            categories,
            x: None,
            y: None,
            first: None,
        }
    }

    pub fn fit(panel: &OrdinalPanel, config: &ModelConfig) -> Result<Self> {
        let q = panel.q();
        let j = panel.categories();
        let x_predictors = baseline_predictors(&config.missing_x, q)?;
        let y_predictors = history_predictors(&config.missing_y, q)?;
        let subjects = panel.subjects();

        let x = if panel.any_missing_x() {
            let rows: Vec<Vec<f64>> = subjects
                .iter()
                .map(|s| baseline_row(&x_predictors, s.responses[0].filter(|_| s.occasions[0] == 0), &s.z[0], j))
                .collect();
            let y: Vec<f64> = subjects.iter().map(|s| f64::from(u8::from(s.x.is_some()))).collect();
            Some(ObservationModel {
                fit: fit_logistic_with(&to_matrix(&rows), &y, "covariate missingness model", SeparationPolicy::Tolerate)?,
            })
        } else {
            None
        };

        let mut y_rows = Vec::new();
        let mut y_obs = Vec::new();
        let mut first_obs = Vec::new();
        for s in subjects {
            first_obs.push(f64::from(u8::from(s.responses[0].is_some())));
            for k in 1..s.len() {
                y_rows.push(history_row(&y_predictors, s, k));
                y_obs.push(f64::from(u8::from(s.responses[k].is_some())));
            }
        }
        let y = if y_obs.iter().any(|&v| v == 0.0) {
            Some(ObservationModel {
                fit: fit_logistic_with(&to_matrix(&y_rows), &y_obs, "response missingness model", SeparationPolicy::Tolerate)?,
            })
        } else {
            None
        };
        let first = if first_obs.iter().any(|&v| v == 0.0) {
            let design = DMatrix::from_element(first_obs.len(), 1, 1.0);
            Some(ObservationModel {
                fit: fit_logistic_with(&design, &first_obs, "first-response missingness model", SeparationPolicy::Tolerate)?,
            })
        } else {
            None
        };
        Ok(MissingnessModels {
            x_predictors,
            y_predictors,
            categories: j,
            x,
            y,
            first,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.x.is_none() && self.y.is_none() && self.first.is_none()
    }

    fn models(&self) -> [Option<&ObservationModel>; 3] {
        [self.x.as_ref(), self.y.as_ref(), self.first.as_ref()]
    }

    /// Stacked coefficients of the fitted models.
    pub fn psi(&self) -> DVector<f64> {
        let v: Vec<f64> = self
            .models()
            .into_iter()
            .flatten()
            .flat_map(|m| m.fit.coef.iter().copied().collect::<Vec<_>>())
            .collect();
        DVector::from_vec(v)
    }

    pub fn psi_dim(&self) -> usize {
        self.models().into_iter().flatten().map(|m| m.fit.coef.len()).sum()
    }

    /// Same models at other stacked coefficients.
    pub fn with_psi(&self, psi: &DVector<f64>) -> Self {
        let mut out = self.clone();
        let mut off = 0;
        for m in [&mut out.x, &mut out.y, &mut out.first].into_iter().flatten() {
            let k = m.fit.coef.len();
            m.fit = m.fit.with_coef(psi.rows(off, k).into_owned());
            off += k;
        }
        out
    }

    /// Block-diagonal Fisher information of the stacked coefficients.
    pub fn information(&self) -> DMatrix<f64> {
        let d = self.psi_dim();
        let mut info = DMatrix::zeros(d, d);
        let mut off = 0;
        for m in self.models().into_iter().flatten() {
            let k = m.fit.coef.len();
            info.view_mut((off, off), (k, k)).copy_from(&m.fit.info);
            off += k;
        }
        info
    }

    /// Per-subject score contributions of the stacked coefficients.
    pub fn subject_scores(&self, panel: &OrdinalPanel) -> Vec<DVector<f64>> {
        let d = self.psi_dim();
        let j = self.categories;
        panel
            .subjects()
            .iter()
            .map(|s| {
                let mut out = DVector::zeros(d);
                let mut off = 0;
                if let Some(m) = &self.x {
                    let row = baseline_row(&self.x_predictors, s.responses[0].filter(|_| s.occasions[0] == 0), &s.z[0], j);
                    let k = row.len();
                    let y = f64::from(u8::from(s.x.is_some()));
                    let sc = &logistic_scores(&to_matrix(&[row]), &[y], &m.fit.coef)[0];
                    out.rows_mut(off, k).copy_from(sc);
                    off += k;
                }
                if let Some(m) = &self.y {
                    let k = m.fit.coef.len();
                    for pos in 1..s.len() {
                        let row = history_row(&self.y_predictors, s, pos);
                        let y = f64::from(u8::from(s.responses[pos].is_some()));
                        let sc = &logistic_scores(&to_matrix(&[row]), &[y], &m.fit.coef)[0];
                        let mut view = out.rows_mut(off, k);
                        view += sc;
                    }
                    off += k;
                }
                if let Some(m) = &self.first {
                    let y = f64::from(u8::from(s.responses[0].is_some()));
                    let sc = &logistic_scores(&DMatrix::from_element(1, 1, 1.0), &[y], &m.fit.coef)[0];
                    out.rows_mut(off, 1).copy_from(sc);
                }
                out
            })
            .collect()
    }

    /// Observation probabilities of one subject, conditional on its observed
    /// history, with every probability raised to at least `floor`.
    pub fn observation_probs(&self, s: &SubjectRecord, floor: f64) -> ObservationProbs {
        let j = self.categories;
        let px = self.x.as_ref().map_or(1.0, |m| {
            m.fit.prob(&baseline_row(
                &self.x_predictors,
                s.responses[0].filter(|_| s.occasions[0] == 0),
                &s.z[0],
                j,
            ))
        });
        let n = s.len();
        let py: Vec<f64> = (0..n)
            .map(|k| {
                if k == 0 {
                    self.first.as_ref().map_or(1.0, |m| m.fit.prob(&[1.0]))
                } else {
                    self.y
                        .as_ref()
                        .map_or(1.0, |m| m.fit.prob(&history_row(&self.y_predictors, s, k)))
                }
            })
            .collect();
        let mut truncated = 0usize;
        let mut clamp = |v: f64| {
            if v < floor {
                truncated += 1;
                floor
            } else {
                v
            }
        };
        let pi: Vec<f64> = py.iter().map(|p| clamp(px * p)).collect();
        let mut pair = DMatrix::zeros(n, n);
        let mut joint = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    pair[(a, a)] = pi[a];
                    joint[(a, a)] = pi[a];
                } else {
                    // occasion a: covariate observed, response either way; occasion b fully observed
                    let both = px * py[a] * py[b];
                    let a_missing = px * (1.0 - py[a]) * py[b];
                    pair[(a, b)] = clamp(a_missing + both);
                    joint[(a, b)] = clamp(both);
                }
            }
        }
        ObservationProbs {
            px,
            py,
            pi,
            pair,
            joint,
            truncated,
        }
    }
}

pub(crate) fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), k, |i, c| rows[i][c])
}

/// Occasion-level weights: diagonal `I(R_a = 3)/pi_a`, off-diagonal
/// `{I(R_a = 1, R_b = 3) + I(R_a = 3, R_b = 3)} / pair_ab`.
pub fn build_weight_matrix(codes: &[MissingCode], probs: &ObservationProbs) -> DMatrix<f64> {
    let n = codes.len();
    DMatrix::from_fn(n, n, |a, b| {
        let full = |c: MissingCode| c == MissingCode::Both;
        if a == b {
            if full(codes[a]) {
                1.0 / probs.pi[a]
            } else {
                0.0
            }
        } else {
            let hit = (codes[a] == MissingCode::CovariateOnly && full(codes[b])) || (full(codes[a]) && full(codes[b]));
            if hit {
                1.0 / probs.pair[(a, b)]
            } else {
                0.0
            }
        }
    })
}

/// Expand occasion-level weights to the stacked (J-1)-block layout.
pub fn expand_weights(delta: &DMatrix<f64>, block: usize) -> DMatrix<f64> {
    let n = delta.nrows();
    DMatrix::from_fn(n * block, n * block, |r, c| delta[(r / block, c / block)])
}

/// Check that weighted estimation is possible: some subjects must be fully observed.
pub(crate) fn require_complete_cases(panel: &OrdinalPanel) -> Result<()> {
    if panel
        .subjects()
        .iter()
        .any(|s| s.x.is_some() && s.responses.iter().any(Option::is_some))
    {
        Ok(())
    } else {
        Err(Error::InsufficientData("no subject has an observed covariate and response".into()))
    }
}
