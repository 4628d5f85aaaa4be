//! Working association structures: Pearson-residual correlations and local odds
//! ratios, their estimators, and assembly of the working covariance matrix.

mod correlation;
mod covariance;
mod ipfp;
mod local_odds;

pub use correlation::{
    estimate_correlation_dr, estimate_correlation_moments, estimate_correlation_weighted,
    pearson_residuals, Denominator, PairExpectation, PairWeights, SubjectResiduals,
};
pub use covariance::{assemble_working_covariance, regularized_inverse, WorkingInverse};
pub use ipfp::{ipfp_joint_probabilities, local_log_odds, IPFP_MAX_ITER, IPFP_TOL};
pub use local_odds::{build_marginalized_tables, fit_rc_loglinear, MarginalizedTables};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorrelationStructure {
    Independence,
    Exchangeable,
    /// One block per adjacent pair of occasions, zero beyond lag one.
    OneDependent,
    /// One block per lag.
    Banded,
    Unstructured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OddsStructure {
    /// Common association parameter, unit-spaced scores.
    Uniform,
    /// One association parameter per pair of occasions, unit-spaced scores.
    TimeExchangeable,
    /// Common association parameter and common free scores.
    CategoryExchangeable,
    /// Association parameter and free scores per pair of occasions.
    RcUnstructured,
}

/// Working association model: family plus structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssociationSpec {
    Correlation(CorrelationStructure),
    LocalOdds(OddsStructure),
}

impl AssociationSpec {
    pub fn independence() -> Self {
        AssociationSpec::Correlation(CorrelationStructure::Independence)
    }

    pub fn is_independence(&self) -> bool {
        matches!(self, AssociationSpec::Correlation(CorrelationStructure::Independence))
    }

    /// The seven structures reported in the simulation tables, in display order.
    pub fn reported() -> Vec<AssociationSpec> {
        use CorrelationStructure as C;
        use OddsStructure as O;
        vec![
            AssociationSpec::Correlation(C::Independence),
            AssociationSpec::Correlation(C::Exchangeable),
            AssociationSpec::Correlation(C::Unstructured),
            AssociationSpec::LocalOdds(O::Uniform),
            AssociationSpec::LocalOdds(O::CategoryExchangeable),
            AssociationSpec::LocalOdds(O::TimeExchangeable),
            AssociationSpec::LocalOdds(O::RcUnstructured),
        ]
    }

    /// Short label used in report tables.
    pub fn label(&self) -> &'static str {
        use CorrelationStructure as C;
        use OddsStructure as O;
        match self {
            AssociationSpec::Correlation(C::Independence) => "ind",
            AssociationSpec::Correlation(C::Exchangeable) => "exch",
            AssociationSpec::Correlation(C::OneDependent) => "1dep",
            AssociationSpec::Correlation(C::Banded) => "band",
            AssociationSpec::Correlation(C::Unstructured) => "unst",
            AssociationSpec::LocalOdds(O::Uniform) => "unif",
            AssociationSpec::LocalOdds(O::TimeExchangeable) => "time.exch",
            AssociationSpec::LocalOdds(O::CategoryExchangeable) => "cat.exch",
            AssociationSpec::LocalOdds(O::RcUnstructured) => "RC",
        }
    }
}

impl fmt::Display for AssociationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use CorrelationStructure as C;
        use OddsStructure as O;
        let s = match self {
            AssociationSpec::Correlation(C::Independence) => "corr:ind",
            AssociationSpec::Correlation(C::Exchangeable) => "corr:exch",
            AssociationSpec::Correlation(C::OneDependent) => "corr:1dep",
            AssociationSpec::Correlation(C::Banded) => "corr:banded",
            AssociationSpec::Correlation(C::Unstructured) => "corr:unst",
            AssociationSpec::LocalOdds(O::Uniform) => "lor:uniform",
            AssociationSpec::LocalOdds(O::TimeExchangeable) => "lor:time-exch",
            AssociationSpec::LocalOdds(O::CategoryExchangeable) => "lor:cat-exch",
            AssociationSpec::LocalOdds(O::RcUnstructured) => "lor:rc",
        };
        f.write_str(s)
    }
}

impl FromStr for AssociationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use CorrelationStructure as C;
        use OddsStructure as O;
        let lower = s.trim().to_ascii_lowercase();
        let (family, structure) = lower
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("association '{s}' must look like family:structure")))?;
        let spec = match (family, structure) {
            ("corr" | "lor", "ind" | "independence") => AssociationSpec::independence(),
            ("corr", "exch" | "exchangeable") => AssociationSpec::Correlation(C::Exchangeable),
            ("corr", "1dep" | "one-dependent" | "onedep") => AssociationSpec::Correlation(C::OneDependent),
            ("corr", "banded" | "band") => AssociationSpec::Correlation(C::Banded),
            ("corr", "unst" | "unstructured") => AssociationSpec::Correlation(C::Unstructured),
            ("lor", "uniform" | "unif") => AssociationSpec::LocalOdds(O::Uniform),
            ("lor", "time-exch" | "time.exch" | "tx") => AssociationSpec::LocalOdds(O::TimeExchangeable),
            ("lor", "cat-exch" | "cat.exch" | "cx") => AssociationSpec::LocalOdds(O::CategoryExchangeable),
            ("lor", "rc" | "rc-unstructured") => AssociationSpec::LocalOdds(O::RcUnstructured),
            _ => return Err(Error::Config(format!("unknown association structure '{s}'"))),
        };
        Ok(spec)
    }
}

impl CorrelationStructure {
    /// Number of pooled blocks for `t` occasions.
    pub fn group_count(self, t: usize) -> usize {
        match self {
            CorrelationStructure::Independence => 0,
            CorrelationStructure::Exchangeable => usize::from(t > 1),
            CorrelationStructure::OneDependent | CorrelationStructure::Banded => t.saturating_sub(1),
            CorrelationStructure::Unstructured => pair_count(t),
        }
    }

    /// Pooling group of the occasion pair `(a, b)`, `a < b`, or `None` when the
    /// structure fixes that pair's correlation to zero.
    pub fn group(self, a: usize, b: usize, t: usize) -> Option<usize> {
        debug_assert!(a < b);
        match self {
            CorrelationStructure::Independence => None,
            CorrelationStructure::Exchangeable => Some(0),
            CorrelationStructure::Banded => Some(b - a - 1),
            CorrelationStructure::OneDependent => (b == a + 1).then_some(a),
            CorrelationStructure::Unstructured => Some(pair_index(a, b, t)),
        }
    }

    fn symmetric_blocks(self) -> bool {
        matches!(self, CorrelationStructure::Exchangeable | CorrelationStructure::Banded)
    }
}

/// Number of unordered occasion pairs.
pub fn pair_count(t: usize) -> usize {
    t * t.saturating_sub(1) / 2
}

/// Lexicographic index of the pair `(a, b)` with `a < b < t`.
pub fn pair_index(a: usize, b: usize, t: usize) -> usize {
    debug_assert!(a < b && b < t);
    a * (2 * t - a - 1) / 2 + (b - a - 1)
}

/// Fitted association parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AssociationEstimate {
    Independence,
    Correlation {
        structure: CorrelationStructure,
        occasions: usize,
        /// One (J-1)x(J-1) block per pooling group; entry (j, j') is
        /// `corr(Y_{a j}, Y_{b j'})` for the earlier occasion `a`.
        blocks: Vec<DMatrix<f64>>,
    },
    LocalOdds {
        structure: OddsStructure,
        occasions: usize,
        /// One (J-1)x(J-1) block of log local odds ratios per occasion pair.
        log_theta: Vec<DMatrix<f64>>,
        phi: Vec<f64>,
        scores: Vec<Vec<f64>>,
    },
}

impl AssociationEstimate {
    /// Correlation block between occasions `a < b`, if the structure has one.
    pub fn correlation_block(&self, a: usize, b: usize) -> Option<&DMatrix<f64>> {
        match self {
            AssociationEstimate::Correlation {
                structure,
                occasions,
                blocks,
            } => structure.group(a, b, *occasions).map(|g| &blocks[g]),
            _ => None,
        }
    }

    pub fn log_odds_block(&self, a: usize, b: usize) -> Option<&DMatrix<f64>> {
        match self {
            AssociationEstimate::LocalOdds {
                occasions,
                log_theta,
                ..
            } => Some(&log_theta[pair_index(a, b, *occasions)]),
            _ => None,
        }
    }

    /// Flattened nuisance vector: stacked blocks in row-major order.
    pub fn alpha(&self) -> Vec<f64> {
        let flatten = |blocks: &[DMatrix<f64>]| {
            blocks
                .iter()
                .flat_map(|b| b.transpose().iter().copied().collect::<Vec<_>>())
                .collect()
        };
        match self {
            AssociationEstimate::Independence => Vec::new(),
            AssociationEstimate::Correlation { blocks, .. } => flatten(blocks),
            AssociationEstimate::LocalOdds { log_theta, .. } => flatten(log_theta),
        }
    }

    /// Element-wise average of estimates sharing one structure (used when
    /// pooling fits to multiply imputed data). Returns `None` for an empty list
    /// or mismatched structures.
    pub fn mean(list: &[AssociationEstimate]) -> Option<AssociationEstimate> {
        let first = list.first()?;
        let m = list.len() as f64;
        let avg_blocks = |get: &dyn Fn(&AssociationEstimate) -> Option<&Vec<DMatrix<f64>>>| -> Option<Vec<DMatrix<f64>>> {
            let base = get(first)?;
            let mut out: Vec<DMatrix<f64>> = base.iter().map(|b| b * 0.0).collect();
            for e in list {
                let blocks = get(e)?;
                if blocks.len() != out.len() {
                    return None;
                }
                for (o, b) in out.iter_mut().zip(blocks) {
                    *o += b / m;
                }
            }
            Some(out)
        };
        match first {
            AssociationEstimate::Independence => list
                .iter()
                .all(|e| *e == AssociationEstimate::Independence)
                .then_some(AssociationEstimate::Independence),
            AssociationEstimate::Correlation { structure, occasions, .. } => {
                let blocks = avg_blocks(&|e| match e {
                    AssociationEstimate::Correlation { blocks, .. } => Some(blocks),
                    _ => None,
                })?;
                Some(AssociationEstimate::Correlation {
                    structure: *structure,
                    occasions: *occasions,
                    blocks,
                })
            }
            AssociationEstimate::LocalOdds {
                structure,
                occasions,
                phi,
                scores,
                ..
            } => {
                let log_theta = avg_blocks(&|e| match e {
                    AssociationEstimate::LocalOdds { log_theta, .. } => Some(log_theta),
                    _ => None,
                })?;
                let mut phi_mean = vec![0.0; phi.len()];
                let mut scores_mean: Vec<Vec<f64>> = scores.iter().map(|s| vec![0.0; s.len()]).collect();
                for e in list {
                    let AssociationEstimate::LocalOdds { phi: p, scores: sc, .. } = e else {
                        return None;
                    };
                    for (a, b) in phi_mean.iter_mut().zip(p) {
                        *a += b / m;
                    }
                    for (row, src) in scores_mean.iter_mut().zip(sc) {
                        for (a, b) in row.iter_mut().zip(src) {
                            *a += b / m;
                        }
                    }
                }
                Some(AssociationEstimate::LocalOdds {
                    structure: *structure,
                    occasions: *occasions,
                    log_theta,
                    phi: phi_mean,
                    scores: scores_mean,
                })
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AssociationEstimate::Independence => "independence",
            AssociationEstimate::Correlation { .. } => "correlation",
            AssociationEstimate::LocalOdds { .. } => "log-local-odds",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        for spec in AssociationSpec::reported() {
            let again: AssociationSpec = spec.to_string().parse().unwrap();
            assert_eq!(again, spec);
        }
        assert_eq!("lor:ind".parse::<AssociationSpec>().unwrap(), AssociationSpec::independence());
        assert!("corr:uniform".parse::<AssociationSpec>().is_err());
        assert!("exch".parse::<AssociationSpec>().is_err());
    }

    #[test]
    fn pair_indices_are_dense() {
        let t = 5;
        let mut seen = vec![];
        for a in 0..t {
            for b in a + 1..t {
                seen.push(pair_index(a, b, t));
            }
        }
        assert_eq!(seen, (0..pair_count(t)).collect::<Vec<_>>());
    }

    #[test]
    fn structure_groups() {
        use CorrelationStructure as C;
        assert_eq!(C::OneDependent.group(0, 2, 3), None);
        assert_eq!(C::OneDependent.group(1, 2, 3), Some(1));
        assert_eq!(C::Banded.group(0, 2, 3), Some(1));
        assert_eq!(C::Exchangeable.group(0, 2, 3), Some(0));
        assert_eq!(C::Unstructured.group_count(4), 6);
    }
}
