use nalgebra::DMatrix;

use crate::association::{
    estimate_correlation_weighted, pearson_residuals, AssociationEstimate, AssociationSpec, Denominator, PairWeights,
};
use crate::error::Result;
use crate::missingness::{build_weight_matrix, expand_weights, require_complete_cases, MissingnessModels};
use crate::model::RegressionParams;
use crate::panel::OrdinalPanel;

use super::engine::{Accumulator, Evaluation, Problem, SubjectBlock};
use super::gee::fixed_association;

/// Observation weights of every subject under fitted missingness models.
#[derive(Debug, Clone)]
pub(crate) struct Weights {
    /// Occasion-level weight matrices.
    pub deltas: Vec<DMatrix<f64>>,
    pub pairs: Vec<PairWeights>,
    pub truncated: usize,
}

impl Weights {
    pub fn new(panel: &OrdinalPanel, models: &MissingnessModels, floor: f64) -> Self {
        let mut deltas = Vec::with_capacity(panel.n());
        let mut pairs = Vec::with_capacity(panel.n());
        let mut truncated = 0;
        for s in panel.subjects() {
            let probs = models.observation_probs(s, floor);
            truncated += probs.truncated;
            deltas.push(build_weight_matrix(&s.r_codes(), &probs));
            pairs.push(probs.pair_weights());
        }
        Weights {
            deltas,
            pairs,
            truncated,
        }
    }
}

/// Weighted GEE: `sum_i D_i' (V_i^{-1} o Delta_i) (Y_i - mu_i) = 0`.
pub(crate) struct WgeeProblem<'a> {
    panel: &'a OrdinalPanel,
    spec: AssociationSpec,
    denominator: Denominator,
    fixed: Option<AssociationEstimate>,
    pub weights: Weights,
}

impl<'a> WgeeProblem<'a> {
    pub fn new(
        panel: &'a OrdinalPanel,
        spec: AssociationSpec,
        denominator: Denominator,
        models: &MissingnessModels,
        floor: f64,
    ) -> Result<Self> {
        require_complete_cases(panel)?;
        Ok(WgeeProblem {
            panel,
            spec,
            denominator,
            fixed: fixed_association(panel, spec)?,
            weights: Weights::new(panel, models, floor),
        })
    }

    pub fn independence(&self) -> Self {
        WgeeProblem {
            panel: self.panel,
            spec: AssociationSpec::independence(),
            denominator: self.denominator,
            fixed: Some(AssociationEstimate::Independence),
            weights: self.weights.clone(),
        }
    }

    pub fn dropped(&self) -> usize {
        self.weights.deltas.iter().filter(|d| d.iter().all(|&v| v == 0.0)).count()
    }

}

impl Problem for WgeeProblem<'_> {
    fn association(&self, beta: &RegressionParams) -> Result<AssociationEstimate> {
        match (&self.fixed, self.spec) {
            (Some(a), _) => Ok(a.clone()),
            (None, AssociationSpec::Correlation(structure)) => estimate_correlation_weighted(
                &pearson_residuals(self.panel, beta)?,
                &self.weights.pairs,
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
            let delta = &self.weights.deltas[i];
            let Some(x) = s.x else { continue };
            if delta.iter().all(|&v| v == 0.0) {
                continue;
            }
            let positions: Vec<usize> = (0..s.len()).collect();
            let block = SubjectBlock::new(beta, s, x, &positions, &alpha)?;
            acc.note_shrinkage(block.shrinkage);
            let m = block.w.component_mul(&expand_weights(delta, block.k));
            let a = block.d.transpose() * m;
            let r = block.residual(s, self.panel.categories())?;
            acc.add(i, &a * r, &(&a * &block.d));
        }
        Ok(acc.finish(alpha))
    }
}
