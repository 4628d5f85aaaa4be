use nalgebra::{DMatrix, DVector};

use super::ipfp::ipfp_joint_probabilities;
use super::AssociationEstimate;
use crate::error::{Error, Result};
use crate::model::{occasion_cov_block, variance_diag};

/// Working covariance of one subject's stacked indicator vector.
///
/// `occasions[k]` is the grid index of the k-th block and `mus[k]` its (J-1)
/// category probabilities. Diagonal blocks are multinomial covariances; off
/// diagonal blocks come from the correlation blocks scaled by the marginal
/// standard deviations, or from IPFP joint tables for local odds ratios.
pub fn assemble_working_covariance(
    occasions: &[usize],
    mus: &[DVector<f64>],
    estimate: &AssociationEstimate,
) -> Result<DMatrix<f64>> {
    let n = occasions.len();
    let k = mus.first().map_or(0, |m| m.len());
    let mut v = DMatrix::zeros(n * k, n * k);
    for (a, mu) in mus.iter().enumerate() {
        v.view_mut((a * k, a * k), (k, k)).copy_from(&occasion_cov_block(mu));
    }
    match estimate {
        AssociationEstimate::Independence => {}
        AssociationEstimate::Correlation { .. } => {
            let sd: Vec<DVector<f64>> = mus.iter().map(|m| variance_diag(m).map(f64::sqrt)).collect();
            for a in 0..n {
                for b in a + 1..n {
                    let Some(rho) = estimate.correlation_block(occasions[a], occasions[b]) else {
                        continue;
                    };
                    let block = DMatrix::from_fn(k, k, |r, c| sd[a][r] * rho[(r, c)] * sd[b][c]);
                    v.view_mut((a * k, b * k), (k, k)).copy_from(&block);
                    v.view_mut((b * k, a * k), (k, k)).copy_from(&block.transpose());
                }
            }
        }
        AssociationEstimate::LocalOdds { .. } => {
            let full: Vec<Vec<f64>> = mus
                .iter()
                .map(|m| {
                    let mut f: Vec<f64> = m.iter().copied().collect();
                    f.push(1.0 - m.sum());
                    f
                })
                .collect();
            for a in 0..n {
                for b in a + 1..n {
                    let lt = estimate
                        .log_odds_block(occasions[a], occasions[b])
                        .ok_or_else(|| Error::InvalidParameter("missing local odds block".into()))?;
                    let joint = ipfp_joint_probabilities(&full[a], &full[b], lt)?;
                    let block = DMatrix::from_fn(k, k, |r, c| joint[(r, c)] - mus[a][r] * mus[b][c]);
                    v.view_mut((a * k, b * k), (k, k)).copy_from(&block);
                    v.view_mut((b * k, a * k), (k, k)).copy_from(&block.transpose());
                }
            }
        }
    }
    Ok(v)
}

/// Inverse of a working covariance together with the shrinkage that was needed.
#[derive(Debug, Clone)]
pub struct WorkingInverse {
    pub inverse: DMatrix<f64>,
    /// Weight on the identity in `(1 - eps) C + eps I`; zero when no shrinkage was needed.
    pub shrinkage: f64,
}

const MAX_SHRINKAGE: f64 = 0.5;

/// Invert `v`; if it is not positive definite, shrink the implied correlation
/// matrix towards the identity with weight doubling from 1e-4, failing once the
/// weight would exceed 0.5.
pub fn regularized_inverse(v: &DMatrix<f64>) -> Result<WorkingInverse> {
    if let Some(c) = v.clone().cholesky() {
        return Ok(WorkingInverse {
            inverse: c.inverse(),
            shrinkage: 0.0,
        });
    }
    let diag = DMatrix::from_diagonal(&v.diagonal());
    let mut eps = 1e-4;
    while eps <= MAX_SHRINKAGE {
        let shrunk = v * (1.0 - eps) + &diag * eps;
        if let Some(c) = shrunk.cholesky() {
            return Ok(WorkingInverse {
                inverse: c.inverse(),
                shrinkage: eps,
            });
        }
        eps *= 2.0;
    }
    Err(Error::ModelFit(
        "working correlation matrix is not positive definite even after shrinkage".into(),
    ))
}
