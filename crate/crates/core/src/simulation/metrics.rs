use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Evaluation criteria for one parameter across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    /// `100 (mean estimate - truth) / truth`.
    pub relative_bias: f64,
    /// Sum of baseline standard errors over sum of standard errors.
    pub relative_efficiency: f64,
    /// Share of nominal 95% normal intervals covering the truth.
    pub coverage: f64,
}

/// Relative bias, relative efficiency against `baseline_ses` and empirical
/// coverage for every parameter. Rows of the inputs are replications.
pub fn compute_metrics(
    estimates: &[Vec<f64>],
    ses: &[Vec<f64>],
    baseline_ses: &[Vec<f64>],
    truth: &[f64],
) -> Result<Vec<ParamMetrics>> {
    let s = estimates.len();
    if s == 0 || ses.len() != s || baseline_ses.len() != s {
        return Err(Error::InsufficientData(format!(
            "metrics need aligned non-empty replications (estimates {s}, standard errors {}, baseline {})",
            ses.len(),
            baseline_ses.len()
        )));
    }
    let p = truth.len();
    if estimates.iter().chain(ses).chain(baseline_ses).any(|row| row.len() != p) {
        return Err(Error::InsufficientData("replication rows do not match the parameter count".into()));
    }
    if let Some(k) = truth.iter().position(|&b| b == 0.0) {
        return Err(Error::ZeroTruth(k));
    }
    let sf = s as f64;
    Ok((0..p)
        .map(|k| {
            let mean = estimates.iter().map(|r| r[k]).sum::<f64>() / sf;
            let se_sum: f64 = ses.iter().map(|r| r[k]).sum();
            let base_sum: f64 = baseline_ses.iter().map(|r| r[k]).sum();
            let covered = estimates
                .iter()
                .zip(ses)
                .filter(|(e, se)| (e[k] - truth[k]).abs() <= Z_975 * se[k])
                .count();
            ParamMetrics {
                relative_bias: 100.0 * (mean - truth[k]) / truth[k],
                relative_efficiency: base_sum / se_sum,
                coverage: covered as f64 / sf,
            }
        })
        .collect())
}
