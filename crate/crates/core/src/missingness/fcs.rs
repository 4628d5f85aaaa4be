use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{baseline_predictors, BaselinePredictor, ModelConfig};
use super::logistic::{fit_logistic_with, SeparationPolicy};
use super::models::{baseline_row, to_matrix};
use super::ordinal::fit_ordinal_with;
use super::predictive::draw_category;
use crate::error::{Error, Result};
use crate::model::expit;
use crate::panel::OrdinalPanel;
use crate::rng::stream;

/// Number of chained-equation cycles run for every imputation.
pub const FCS_CYCLES: usize = 10;

/// Draw from N(mean, cov); falls back to the mean when `cov` is not positive definite.
fn draw_normal<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    match cov.clone().cholesky() {
        Some(c) => {
            let e = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            mean + c.l() * e
        }
        None => mean.clone(),
    }
}

struct Working {
    x: Vec<f64>,
    o: Vec<Vec<u8>>,
}

fn dummies(o: u8, categories: usize, row: &mut Vec<f64>) {
    for j in 1..categories {
        row.push(f64::from(u8::from(o as usize == j)));
    }
}

/// Fully conditional specification: cycle a cumulative-logit model for every
/// occasion with missing responses and a logistic model for a missing binary
/// covariate, each refitted on its observed rows and sampled with parameters
/// drawn from their approximate posterior. Every imputation runs `cycles`
/// cycles from a fresh start on its own random stream. Observed cells are
/// never modified.
pub fn fcs_impute(
    panel: &OrdinalPanel,
    config: &ModelConfig,
    imputations: usize,
    cycles: usize,
    seed: u64,
) -> Result<Vec<OrdinalPanel>> {
    if imputations < 2 {
        return Err(Error::Imputation(format!("need at least 2 imputations, got {imputations}")));
    }
    if !panel.has_missing() {
        return Ok(vec![panel.clone(); imputations]);
    }
    if !panel.is_balanced() {
        return Err(Error::Imputation(
            "imputation needs every subject to have a row for every occasion".into(),
        ));
    }
    let x_predictors = baseline_predictors(&config.covariate, panel.q())?;
    (0..imputations)
        .map(|m| impute_once(panel, &x_predictors, cycles, &mut stream(seed, &[m as u64])))
        .collect()
}

fn impute_once<R: Rng + ?Sized>(
    panel: &OrdinalPanel,
    x_predictors: &[BaselinePredictor],
    cycles: usize,
    rng: &mut R,
) -> Result<OrdinalPanel> {
    let subjects = panel.subjects();
    let t_count = panel.occasions();
    let j = panel.categories();

    // initialization by sampling from the observed marginal distributions
    let observed_x: Vec<f64> = subjects.iter().filter_map(|s| s.x).collect();
    if observed_x.is_empty() && panel.any_missing_x() {
        return Err(Error::Imputation("covariate never observed".into()));
    }
    if observed_x.iter().any(|&v| v != 0.0 && v != 1.0) && panel.any_missing_x() {
        return Err(Error::Imputation("imputation of x needs a binary 0/1 covariate".into()));
    }
    let x_rate = observed_x.iter().sum::<f64>() / observed_x.len().max(1) as f64;
    let mut w = Working {
        x: subjects
            .iter()
            .map(|s| s.x.unwrap_or_else(|| f64::from(u8::from(rng.random::<f64>() < x_rate))))
            .collect(),
        o: vec![Vec::new(); subjects.len()],
    };
    for t in 0..t_count {
        let mut freq = vec![0.0; j];
        for s in subjects {
            if let Some(o) = s.responses[t] {
                freq[o as usize - 1] += 1.0;
            }
        }
        if freq.iter().sum::<f64>() == 0.0 {
            return Err(Error::Imputation(format!("occasion {} has no observed response", t + 1)));
        }
        for (i, s) in subjects.iter().enumerate() {
            let o = s.responses[t].unwrap_or_else(|| draw_category(&freq, rng));
            w.o[i].push(o);
        }
    }

    let uses_first = x_predictors
        .iter()
        .any(|p| matches!(p, BaselinePredictor::Response | BaselinePredictor::ResponseCategories));
    let response_row = |w: &Working, i: usize, t: usize| -> Vec<f64> {
        let mut row = vec![w.x[i]];
        for zs in &subjects[i].z {
            row.extend_from_slice(zs);
        }
        for s in 0..t_count {
            if s != t {
                dummies(w.o[i][s], j, &mut row);
            }
        }
        row
    };
    let x_row = |w: &Working, i: usize| -> Vec<f64> {
        let mut row = baseline_row(x_predictors, Some(w.o[i][0]), &subjects[i].z[0], j);
        for s in usize::from(uses_first)..t_count {
            dummies(w.o[i][s], j, &mut row);
        }
        row
    };

    for _ in 0..cycles {
        for t in 0..t_count {
            let missing: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].responses[t].is_none()).collect();
            if missing.is_empty() {
                continue;
            }
            let observed: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].responses[t].is_some()).collect();
            let y: Vec<u8> = observed.iter().map(|&i| w.o[i][t]).collect();
            let first = y[0];
            if y.iter().all(|&v| v == first) {
                for &i in &missing {
                    w.o[i][t] = first;
                }
                continue;
            }
            let design = to_matrix(&observed.iter().map(|&i| response_row(&w, i, t)).collect::<Vec<_>>());
            let fit = fit_ordinal_with(&design, &y, j, &format!("imputation model at occasion {}", t + 1), SeparationPolicy::Tolerate)
                .map_err(|e| Error::Imputation(e.to_string()))?;
            let coef = DVector::from_vec(fit.coef());
            let drawn = fit.with_coef(draw_normal(&coef, &fit.cov, rng).as_slice());
            for &i in &missing {
                let probs = drawn.probs(&response_row(&w, i, t));
                w.o[i][t] = draw_category(&probs, rng);
            }
        }
        let missing_x: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].x.is_none()).collect();
        if !missing_x.is_empty() {
            let observed: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].x.is_some()).collect();
            let y: Vec<f64> = observed.iter().map(|&i| w.x[i]).collect();
            if y.iter().all(|&v| v == y[0]) {
                for &i in &missing_x {
                    w.x[i] = y[0];
                }
            } else {
                let design = to_matrix(&observed.iter().map(|&i| x_row(&w, i)).collect::<Vec<_>>());
                let fit = fit_logistic_with(&design, &y, "covariate imputation model", SeparationPolicy::Tolerate)
                    .map_err(|e| Error::Imputation(e.to_string()))?;
                let gamma = draw_normal(&fit.coef, &fit.cov, rng);
                for &i in &missing_x {
                    let row = x_row(&w, i);
                    let eta: f64 = gamma.iter().zip(&row).map(|(a, b)| a * b).sum();
                    w.x[i] = f64::from(u8::from(rng.random::<f64>() < expit(eta)));
                }
            }
        }
    }

    let completed = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut c = s.clone();
            c.x = Some(s.x.unwrap_or(w.x[i]));
            for (k, r) in c.responses.iter_mut().enumerate() {
                if r.is_none() {
                    *r = Some(w.o[i][k]);
                }
            }
            c
        })
        .collect();
    panel.with_subjects(completed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::SubjectRecord;

    fn subject(id: usize, x: Option<f64>, r: [Option<u8>; 2]) -> SubjectRecord {
        SubjectRecord {
            id: id.to_string(),
            occasions: vec![0, 1],
            responses: r.to_vec(),
            x,
            z: vec![vec![id as f64 * 0.01], vec![-(id as f64) * 0.02]],
        }
    }

    #[test]
    fn no_missing_gives_identical_copies() {
        let subs: Vec<_> = (0..6).map(|i| subject(i, Some((i % 2) as f64), [Some(1 + (i % 3) as u8), Some(2)])).collect();
        let panel = OrdinalPanel::new(subs, 3, 2, 1).unwrap();
        let out = fcs_impute(&panel, &ModelConfig::default(), 3, FCS_CYCLES, 1).unwrap();
        assert!(out.iter().all(|p| p == &panel));
    }

    #[test]
    fn degenerate_covariate_imputes_constant() {
        let mut subs: Vec<_> = (0..8).map(|i| subject(i, Some(1.0), [Some(1 + (i % 3) as u8), Some(1 + (i % 2) as u8)])).collect();
        subs[3].x = None;
        let panel = OrdinalPanel::new(subs, 3, 2, 1).unwrap();
        let out = fcs_impute(&panel, &ModelConfig::default(), 4, FCS_CYCLES, 9).unwrap();
        for p in &out {
            assert_eq!(p.subjects()[3].x, Some(1.0));
        }
    }

    #[test]
    fn rejects_single_imputation() {
        let subs: Vec<_> = (0..4).map(|i| subject(i, Some(0.0), [Some(1), Some(2)])).collect();
        let panel = OrdinalPanel::new(subs, 3, 2, 1).unwrap();
        assert!(fcs_impute(&panel, &ModelConfig::default(), 1, FCS_CYCLES, 0).is_err());
    }
}
