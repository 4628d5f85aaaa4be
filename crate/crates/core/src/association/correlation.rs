use nalgebra::{DMatrix, DVector};

use super::{AssociationEstimate, CorrelationStructure};
use crate::error::{Error, Result};
use crate::model::{category_probs, variance_diag, RegressionParams};
use crate::panel::{indicator, OrdinalPanel};

/// Pearson residuals of one subject, aligned with its occasions. `None` marks an
/// occasion whose residual is not available (unobserved response or covariate).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectResiduals {
    pub occasions: Vec<usize>,
    pub e: Vec<Option<DVector<f64>>>,
}

/// How the pooled cross-products are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Denominator {
    /// Number of contributing pairs minus the regression dimension.
    #[default]
    AdjustedPairs,
    /// Number of contributing pairs.
    RawPairs,
}

/// Observation probabilities needed by the weighted estimator, by subject position.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights {
    /// `pi[a]`: probability that position `a` is fully observed.
    pub pi: Vec<f64>,
    /// `joint[(a, b)]`: probability that positions `a` and `b` are both fully observed.
    pub joint: DMatrix<f64>,
}

/// Expected cross-product `E[e_a e_b']` over the completions of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExpectation {
    pub a: usize,
    pub b: usize,
    pub value: DMatrix<f64>,
}

/// `e_t = F_t^{-1/2} (Y_t - mu_t)` for every occasion with both the response and
/// the covariate observed.
pub fn pearson_residuals(panel: &OrdinalPanel, beta: &RegressionParams) -> Result<Vec<SubjectResiduals>> {
    panel
        .subjects()
        .iter()
        .map(|s| {
            let e = s
                .responses
                .iter()
                .enumerate()
                .map(|(k, r)| match (r, s.x) {
                    (Some(c), Some(x)) => {
                        let mu = category_probs(beta.intercepts(), beta.eta(x, &s.z[k]));
                        let y = indicator(*c, panel.categories())?;
                        Ok(Some(standardize(&y, &mu)))
                    }
                    _ => Ok(None),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SubjectResiduals {
                occasions: s.occasions.clone(),
                e,
            })
        })
        .collect()
}

pub(crate) fn standardize(y: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
    let f = variance_diag(mu);
    (y - mu).component_div(&f.map(f64::sqrt))
}

struct Pool {
    sums: Vec<DMatrix<f64>>,
    counts: Vec<f64>,
}

impl Pool {
    fn new(groups: usize, k: usize) -> Self {
        Pool {
            sums: vec![DMatrix::zeros(k, k); groups],
            counts: vec![0.0; groups],
        }
    }
}

fn dimension(residuals: &[SubjectResiduals]) -> Option<usize> {
    residuals.iter().flat_map(|r| r.e.iter().flatten()).map(|e| e.len()).next()
}

fn finish(
    mut pool: Pool,
    structure: CorrelationStructure,
    occasions: usize,
    p: usize,
    denominator: Denominator,
) -> Result<AssociationEstimate> {
    for (g, (sum, count)) in pool.sums.iter_mut().zip(&pool.counts).enumerate() {
        let denom = match denominator {
            Denominator::AdjustedPairs => count - p as f64,
            Denominator::RawPairs => *count,
        };
        if denom <= 0.0 {
            return Err(Error::InsufficientData(format!(
                "correlation group {g} has {count} contributing pairs (need more than {})",
                if denominator == Denominator::AdjustedPairs { p } else { 0 }
            )));
        }
        *sum /= denom;
        if structure.symmetric_blocks() {
            *sum = (&*sum + sum.transpose()) * 0.5;
        }
    }
    Ok(AssociationEstimate::Correlation {
        structure,
        occasions,
        blocks: pool.sums,
    })
}

/// Moment estimator: pooled averages of `e_a e_b'` over pairs with both
/// residuals available, grouped by the structure's equality constraints.
pub fn estimate_correlation_moments(
    residuals: &[SubjectResiduals],
    structure: CorrelationStructure,
    occasions: usize,
    p: usize,
    denominator: Denominator,
) -> Result<AssociationEstimate> {
    if structure == CorrelationStructure::Independence {
        return Ok(AssociationEstimate::Independence);
    }
    let k = dimension(residuals)
        .ok_or_else(|| Error::InsufficientData("no residuals available".into()))?;
    let mut pool = Pool::new(structure.group_count(occasions), k);
    for r in residuals {
        for a in 0..r.e.len() {
            let Some(ea) = &r.e[a] else { continue };
            for b in a + 1..r.e.len() {
                let Some(eb) = &r.e[b] else { continue };
                if let Some(g) = structure.group(r.occasions[a], r.occasions[b], occasions) {
                    pool.sums[g] += ea * eb.transpose();
                    pool.counts[g] += 1.0;
                }
            }
        }
    }
    finish(pool, structure, occasions, p, denominator)
}

fn pair_counts(residuals: &[SubjectResiduals], structure: CorrelationStructure, occasions: usize, pool: &mut Pool) {
    for r in residuals {
        for a in 0..r.occasions.len() {
            for b in a + 1..r.occasions.len() {
                if let Some(g) = structure.group(r.occasions[a], r.occasions[b], occasions) {
                    pool.counts[g] += 1.0;
                }
            }
        }
    }
}

fn weighted_sums(
    residuals: &[SubjectResiduals],
    weights: &[PairWeights],
    structure: CorrelationStructure,
    occasions: usize,
    pool: &mut Pool,
) {
    for (r, w) in residuals.iter().zip(weights) {
        for a in 0..r.e.len() {
            let Some(ea) = &r.e[a] else { continue };
            let ea_star = ea / w.pi[a];
            for b in a + 1..r.e.len() {
                let Some(eb) = &r.e[b] else { continue };
                if let Some(g) = structure.group(r.occasions[a], r.occasions[b], occasions) {
                    let eb_star = eb / w.pi[b];
                    let factor = w.pi[a] * w.pi[b] / w.joint[(a, b)];
                    pool.sums[g] += (&ea_star * eb_star.transpose()) * factor;
                }
            }
        }
    }
}

/// Inverse-probability weighted moment estimator. Residuals must be present
/// exactly at fully observed occasions; every pair of occasions, observed or not,
/// counts towards the denominator.
pub fn estimate_correlation_weighted(
    residuals: &[SubjectResiduals],
    weights: &[PairWeights],
    structure: CorrelationStructure,
    occasions: usize,
    p: usize,
    denominator: Denominator,
) -> Result<AssociationEstimate> {
    if structure == CorrelationStructure::Independence {
        return Ok(AssociationEstimate::Independence);
    }
    let k = dimension(residuals)
        .ok_or_else(|| Error::InsufficientData("no residuals available".into()))?;
    let mut pool = Pool::new(structure.group_count(occasions), k);
    weighted_sums(residuals, weights, structure, occasions, &mut pool);
    pair_counts(residuals, structure, occasions, &mut pool);
    finish(pool, structure, occasions, p, denominator)
}

/// Doubly robust blend: `omega` times the weighted estimator plus `1 - omega`
/// times the average expected cross-product over each subject's completions.
#[allow(clippy::too_many_arguments)]
pub fn estimate_correlation_dr(
    residuals: &[SubjectResiduals],
    weights: &[PairWeights],
    expectations: &[Vec<PairExpectation>],
    omega: f64,
    structure: CorrelationStructure,
    occasions: usize,
    p: usize,
    denominator: Denominator,
) -> Result<AssociationEstimate> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidParameter(format!("omega {omega} outside [0, 1]")));
    }
    if structure == CorrelationStructure::Independence {
        return Ok(AssociationEstimate::Independence);
    }
    let k = expectations
        .iter()
        .flatten()
        .map(|e| e.value.nrows())
        .next()
        .or_else(|| dimension(residuals))
        .ok_or_else(|| Error::InsufficientData("no residuals available".into()))?;
    let groups = structure.group_count(occasions);
    let mut pool = Pool::new(groups, k);
    weighted_sums(residuals, weights, structure, occasions, &mut pool);
    let mut expected = vec![DMatrix::zeros(k, k); groups];
    for (r, list) in residuals.iter().zip(expectations) {
        for pe in list {
            if let Some(g) = structure.group(r.occasions[pe.a], r.occasions[pe.b], occasions) {
                expected[g] += &pe.value;
            }
        }
    }
    for (s, e) in pool.sums.iter_mut().zip(&expected) {
        *s = &*s * omega + e * (1.0 - omega);
    }
    pair_counts(residuals, structure, occasions, &mut pool);
    finish(pool, structure, occasions, p, denominator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn res(e: Vec<Option<f64>>) -> SubjectResiduals {
        SubjectResiduals {
            occasions: (0..e.len()).collect(),
            e: e.into_iter().map(|v| v.map(|x| DVector::from_vec(vec![x]))).collect(),
        }
    }

    #[test]
    fn constant_cross_products_pool_to_constant() {
        let c = 0.3_f64;
        let data: Vec<_> = (0..10).map(|_| res(vec![Some(c.sqrt()); 3])).collect();
        for s in [
            CorrelationStructure::Exchangeable,
            CorrelationStructure::Banded,
            CorrelationStructure::OneDependent,
            CorrelationStructure::Unstructured,
        ] {
            let est = estimate_correlation_moments(&data, s, 3, 2, Denominator::RawPairs).unwrap();
            for v in est.alpha() {
                assert_abs_diff_eq!(v, c, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn adjusted_denominator_subtracts_p() {
        let data: Vec<_> = (0..5).map(|_| res(vec![Some(1.0), Some(1.0)])).collect();
        let est =
            estimate_correlation_moments(&data, CorrelationStructure::Exchangeable, 2, 2, Denominator::AdjustedPairs)
                .unwrap();
        assert_abs_diff_eq!(est.alpha()[0], 5.0 / 3.0, epsilon = 1e-15);
        let too_few: Vec<_> = (0..2).map(|_| res(vec![Some(1.0), Some(1.0)])).collect();
        assert!(estimate_correlation_moments(
            &too_few,
            CorrelationStructure::Exchangeable,
            2,
            2,
            Denominator::AdjustedPairs
        )
        .is_err());
    }

    #[test]
    fn independence_has_no_parameters() {
        let data = vec![res(vec![Some(1.0), Some(-1.0)])];
        let est =
            estimate_correlation_moments(&data, CorrelationStructure::Independence, 2, 1, Denominator::RawPairs)
                .unwrap();
        assert_eq!(est, AssociationEstimate::Independence);
    }

    #[test]
    fn weighted_pair_hand_value() {
        // one fully observed pair with pi_a = pi_b = joint = 0.5:
        // (e_a/0.5)(e_b/0.5) * (0.5*0.5/0.5) = 2 e_a e_b
        let data = vec![res(vec![Some(0.6), Some(0.7)])];
        let w = vec![PairWeights {
            pi: vec![0.5, 0.5],
            joint: DMatrix::from_element(2, 2, 0.5),
        }];
        let est = estimate_correlation_weighted(
            &data,
            &w,
            CorrelationStructure::Exchangeable,
            2,
            0,
            Denominator::RawPairs,
        )
        .unwrap();
        assert_abs_diff_eq!(est.alpha()[0], 2.0 * 0.6 * 0.7, epsilon = 1e-15);
    }

    #[test]
    fn weighted_with_unit_probabilities_equals_moments() {
        let data: Vec<_> = (0..8)
            .map(|i| res(vec![Some(0.1 * i as f64), Some(0.3 - 0.05 * i as f64), Some(0.2)]))
            .collect();
        let w: Vec<_> = data
            .iter()
            .map(|_| PairWeights {
                pi: vec![1.0; 3],
                joint: DMatrix::from_element(3, 3, 1.0),
            })
            .collect();
        for s in [CorrelationStructure::Exchangeable, CorrelationStructure::Unstructured] {
            let a = estimate_correlation_moments(&data, s, 3, 2, Denominator::AdjustedPairs).unwrap();
            let b = estimate_correlation_weighted(&data, &w, s, 3, 2, Denominator::AdjustedPairs).unwrap();
            for (x, y) in a.alpha().iter().zip(b.alpha()) {
                assert_abs_diff_eq!(*x, y, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn dr_blend_endpoints() {
        let data = vec![
            res(vec![Some(0.5), Some(0.4)]),
            res(vec![Some(-0.2), None]),
            res(vec![Some(0.3), Some(0.1)]),
        ];
        let w: Vec<_> = (0..3)
            .map(|i| PairWeights {
                pi: vec![1.0, if i == 1 { 0.6 } else { 0.8 }],
                joint: DMatrix::from_element(2, 2, 0.7),
            })
            .collect();
        let exp: Vec<Vec<PairExpectation>> = vec![
            vec![PairExpectation { a: 0, b: 1, value: DMatrix::from_element(1, 1, 0.2) }],
            vec![PairExpectation { a: 0, b: 1, value: DMatrix::from_element(1, 1, -0.1) }],
            vec![PairExpectation { a: 0, b: 1, value: DMatrix::from_element(1, 1, 0.03) }],
        ];
        let s = CorrelationStructure::Exchangeable;
        let weighted = estimate_correlation_weighted(&data, &w, s, 2, 0, Denominator::RawPairs).unwrap();
        let one = estimate_correlation_dr(&data, &w, &exp, 1.0, s, 2, 0, Denominator::RawPairs).unwrap();
        assert_abs_diff_eq!(weighted.alpha()[0], one.alpha()[0], epsilon = 1e-15);
        let zero = estimate_correlation_dr(&data, &w, &exp, 0.0, s, 2, 0, Denominator::RawPairs).unwrap();
        assert_abs_diff_eq!(zero.alpha()[0], (0.2 - 0.1 + 0.03) / 3.0, epsilon = 1e-15);
        let half = estimate_correlation_dr(&data, &w, &exp, 0.5, s, 2, 0, Denominator::RawPairs).unwrap();
        assert_abs_diff_eq!(
            half.alpha()[0],
            0.5 * weighted.alpha()[0] + 0.5 * zero.alpha()[0],
            epsilon = 1e-15
        );
    }
}
