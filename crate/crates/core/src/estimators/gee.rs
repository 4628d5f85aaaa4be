use crate::association::{
    build_marginalized_tables, estimate_correlation_moments, fit_rc_loglinear, pearson_residuals, AssociationEstimate,
    AssociationSpec, CorrelationStructure, Denominator,
};
use crate::error::Result;
use crate::model::RegressionParams;
use crate::panel::OrdinalPanel;

use super::engine::{observed_positions, Accumulator, Evaluation, Problem, SubjectBlock};

/// Association estimate that does not depend on the regression parameters:
/// independence, or local odds ratios fitted to the pairwise-complete tables.
pub(crate) fn fixed_association(panel: &OrdinalPanel, spec: AssociationSpec) -> Result<Option<AssociationEstimate>> {
    match spec {
        AssociationSpec::Correlation(CorrelationStructure::Independence) => Ok(Some(AssociationEstimate::Independence)),
        AssociationSpec::Correlation(_) => Ok(None),
        AssociationSpec::LocalOdds(structure) => {
            Ok(Some(fit_rc_loglinear(&build_marginalized_tables(panel), structure)?))
        }
    }
}

/// Available-data GEE: every occasion with both the response and the covariate observed.
pub(crate) struct GeeProblem<'a> {
    panel: &'a OrdinalPanel,
    spec: AssociationSpec,
    denominator: Denominator,
    fixed: Option<AssociationEstimate>,
}

impl<'a> GeeProblem<'a> {
    pub fn new(panel: &'a OrdinalPanel, spec: AssociationSpec, denominator: Denominator) -> Result<Self> {
        let fixed = if matches!(spec, AssociationSpec::LocalOdds(_)) {
            let usable = panel.with_subjects(panel.subjects().iter().filter(|s| s.x.is_some()).cloned().collect())?;
            fixed_association(&usable, spec)?
        } else {
            fixed_association(panel, spec)?
        };
        Ok(GeeProblem {
            panel,
            spec,
            denominator,
            fixed,
        })
    }

    pub fn independence(&self) -> Self {
        GeeProblem {
            panel: self.panel,
            spec: AssociationSpec::independence(),
            denominator: self.denominator,
            fixed: Some(AssociationEstimate::Independence),
        }
    }

    /// Subjects contributing nothing (covariate missing or no observed response).
    pub fn dropped(&self) -> usize {
        self.panel
            .subjects()
            .iter()
            .filter(|s| s.x.is_none() || s.responses.iter().all(Option::is_none))
            .count()
    }

}

impl Problem for GeeProblem<'_> {
    fn association(&self, beta: &RegressionParams) -> Result<AssociationEstimate> {
        match (&self.fixed, self.spec) {
            (Some(a), _) => Ok(a.clone()),
            (None, AssociationSpec::Correlation(structure)) => estimate_correlation_moments(
                &pearson_residuals(self.panel, beta)?,
                structure,
                self.panel.occasions(),
                beta.dim(),
                self.denominator,
            ),
            (None, AssociationSpec::LocalOdds(_)) => unreachable!("local odds are fixed"),
        }
    }

    fn evaluate_at(&self, beta: &RegressionParams, alpha: AssociationEstimate) -> Result<Evaluation> {
        let subjects = self.panel.subjects();
        let mut acc = Accumulator::new(beta.dim(), subjects.len());
        for (i, s) in subjects.iter().enumerate() {
            let Some(x) = s.x else { continue };
            let positions = observed_positions(s);
            if positions.is_empty() {
                continue;
            }
            let block = SubjectBlock::new(beta, s, x, &positions, &alpha)?;
            acc.note_shrinkage(block.shrinkage);
            let a = block.d.transpose() * &block.w;
            let r = block.residual(s, self.panel.categories())?;
            acc.add(i, &a * r, &(&a * &block.d));
        }
        Ok(acc.finish(alpha))
    }
}
