use nalgebra::{DMatrix, DVector};

use crate::association::AssociationEstimate;
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::model::RegressionParams;

use super::fit::{Diagnostics, FitResult};

/// Pool fits to multiply imputed data sets: the point estimate is the mean of
/// the converged fits and the covariance is `W + (M + 1)/M B`, with `W` the mean
/// within-imputation covariance and `B` the between-imputation covariance.
pub fn mi_pool(fits: &[FitResult]) -> Result<FitResult> {
    let ok: Vec<&FitResult> = fits.iter().filter(|f| f.converged).collect();
    let m = ok.len();
    if m < 2 {
        return Err(Error::Pooling(format!("need at least 2 converged fits, got {m}")));
    }
    let first = ok[0];
    let p = first.beta.dim();
    if ok.iter().any(|f| f.beta.dim() != p || f.method != first.method || f.association != first.association) {
        return Err(Error::Pooling("fits do not share a parameter layout".into()));
    }
    let mf = m as f64;
    let mean = ok.iter().fold(DVector::zeros(p), |acc, f| acc + f.beta.to_dvector()) / mf;
    let within = ok.iter().fold(DMatrix::zeros(p, p), |acc, f| acc + &f.vcov) / mf;
    let between = ok.iter().fold(DMatrix::zeros(p, p), |acc, f| {
        let d = f.beta.to_dvector() - &mean;
        acc + &d * d.transpose()
    }) / (mf - 1.0);
    let vcov = symmetrize(&(within + between * ((mf + 1.0) / mf)));
    let alphas: Vec<AssociationEstimate> = ok.iter().map(|f| f.alpha.clone()).collect();
    let alpha = AssociationEstimate::mean(&alphas).unwrap_or_else(|| first.alpha.clone());
    let diagnostics = Diagnostics {
        max_shrinkage: ok.iter().map(|f| f.diagnostics.max_shrinkage).fold(0.0, f64::max),
        shrunk_subjects: ok.iter().map(|f| f.diagnostics.shrunk_subjects).sum(),
        truncated_weights: 0,
        mc_fallbacks: 0,
        pseudo_inverse: ok.iter().any(|f| f.diagnostics.pseudo_inverse),
        halvings: ok.iter().map(|f| f.diagnostics.halvings).sum(),
        newton_steps: ok.iter().map(|f| f.diagnostics.newton_steps).sum(),
        dropped_subjects: 0,
        imputations: fits.len(),
        failure: (m < fits.len()).then(|| format!("{} of {} imputed fits did not converge", fits.len() - m, fits.len())),
    };
    Ok(FitResult {
        method: first.method,
        association: first.association,
        beta: RegressionParams::from_slice(mean.as_slice(), first.beta.categories())?,
        alpha,
        vcov,
        converged: true,
        iterations: ok.iter().map(|f| f.iterations).max().unwrap_or(0),
        score_norm: ok.iter().map(|f| f.score_norm).fold(0.0, f64::max),
        n: first.n,
        diagnostics,
        trace: Vec::new(),
    })
}
