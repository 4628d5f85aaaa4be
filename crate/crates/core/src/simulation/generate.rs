use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::model::{expit, logit, RegressionParams};
use crate::panel::{OrdinalPanel, SubjectRecord};

/// Data-generating design: cumulative-logit responses with latent exchangeable
/// dependence, a binary baseline covariate driven by the first `z1`, and
/// missingness that depends on the observed history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub occasions: usize,
    /// Replications kept per association structure.
    pub reps: usize,
    pub beta: RegressionParams,
    /// Correlation of the latent normal vector (exchangeable).
    pub rho: f64,
    /// `logit P(X = 1) = gamma[0] + gamma[1] z1` at the first occasion.
    pub gamma: [f64; 2],
    /// `logit P(X missing) = psi_x[0] + psi_x[1] O_1 + psi_x[2] z1`.
    pub psi_x: [f64; 3],
    /// `logit P(O_t missing) = psi_y[0] + psi_y[1] O*_{t-1} + psi_y[2] I(O_{t-1} missing) + psi_y[3] z1_t`,
    /// with `O*` the previous response, 0 when it is missing.
    pub psi_y: [f64; 4],
    pub z_variance: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            n: 300,
            occasions: 3,
            reps: 200,
            beta: RegressionParams::new(vec![-0.4, 1.2], -0.35, vec![0.35]).expect("valid defaults"),
            rho: 0.7,
            gamma: [0.0, 2.0],
            psi_x: [1.2, -1.5, -1.5],
            psi_y: [0.6, -1.5, 2.5, -1.3],
            z_variance: 0.5,
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn categories(&self) -> usize {
        self.beta.categories()
    }

    pub fn q(&self) -> usize {
        self.beta.beta_z().len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.occasions == 0 {
            return Err(Error::Config("scenario needs at least one subject and one occasion".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("scenario needs at least one replication".into()));
        }
        if self.q() == 0 {
            return Err(Error::Config("scenario needs at least one time-varying covariate".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("latent correlation {} outside [0, 1)", self.rho)));
        }
        if !(self.z_variance > 0.0) {
            return Err(Error::Config(format!("covariate variance {} is not positive", self.z_variance)));
        }
        Ok(())
    }
}

/// Draw a complete panel. Each subject's latent vector is exchangeable normal
/// with correlation `rho`; every coordinate is mapped through the normal CDF and
/// the logistic quantile, so `O_t <= j` exactly when the logistic variate falls
/// below `b0_j + x b_x + z_t'b_z`.
pub fn generate_panel<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<OrdinalPanel> {
    scenario.validate()?;
    let t = scenario.occasions;
    let q = scenario.q();
    let z_dist = Normal::new(0.0, scenario.z_variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let phi = StdNormal::standard();
    let shared = scenario.rho.sqrt();
    let own = (1.0 - scenario.rho).sqrt();
    let cuts = scenario.beta.intercepts();
    let mut subjects = Vec::with_capacity(scenario.n);
    for i in 0..scenario.n {
        let z: Vec<Vec<f64>> = (0..t).map(|_| (0..q).map(|_| z_dist.sample(rng)).collect()).collect();
        let px = expit(scenario.gamma[0] + scenario.gamma[1] * z[0][0]);
        let x = if rng.random::<f64>() < px { 1.0 } else { 0.0 };
        let common: f64 = rng.sample(StandardNormal);
        let responses = (0..t)
            .map(|k| {
                let latent = shared * common + own * rng.sample::<f64, _>(StandardNormal);
                let u = phi.cdf(latent).clamp(1e-300, 1.0 - 1e-16);
                let eps = logit(u);
                let eta = scenario.beta.eta(x, &z[k]);
                let above = cuts.iter().filter(|&&b| eps > b + eta).count();
                Some((above + 1) as u8)
            })
            .collect();
        subjects.push(SubjectRecord {
            id: format!("{}", i + 1),
            occasions: (0..t).collect(),
            responses,
            x: Some(x),
            z,
        });
    }
    OrdinalPanel::new(subjects, scenario.categories(), t, q)
}

/// Remove values from a complete panel. `X` is dropped with probability
/// `expit(psi_x . (1, O_1, z1_1))`; the first response is always kept and later
/// responses are dropped sequentially using only the realized observed history.
pub fn inject_missingness<R: Rng + ?Sized>(panel: &OrdinalPanel, scenario: &Scenario, rng: &mut R) -> Result<OrdinalPanel> {
    let [a0, a1, a2] = scenario.psi_x;
    let [b0, b1, b2, b3] = scenario.psi_y;
    let subjects = panel
        .subjects()
        .iter()
        .map(|s| {
            let mut out = s.clone();
            let first = s.responses[0].map_or(0.0, f64::from);
            if rng.random::<f64>() < expit(a0 + a1 * first + a2 * s.z[0][0]) {
                out.x = None;
            }
            for k in 1..s.len() {
                let prev = out.responses[k - 1];
                let star = prev.map_or(0.0, f64::from);
                let prev_missing = if prev.is_none() { 1.0 } else { 0.0 };
                if rng.random::<f64>() < expit(b0 + b1 * star + b2 * prev_missing + b3 * s.z[k][0]) {
                    out.responses[k] = None;
                }
            }
            out
        })
        .collect();
    panel.with_subjects(subjects)
}

/// Demonstration panel with four time-varying covariates (seven regression
/// coefficients), optionally with missing values injected by the default design.
pub fn demo_panel(n: usize, seed: u64, with_gaps: bool) -> Result<OrdinalPanel> {
    let scenario = Scenario {
        n,
        beta: RegressionParams::new(vec![-0.4, 1.2], -0.35, vec![0.35, -0.25, 0.2, 0.1])?,
        seed,
        ..Scenario::default()
    };
    let complete = generate_panel(&scenario, &mut crate::rng::stream(seed, &[0]))?;
    if with_gaps {
        inject_missingness(&complete, &scenario, &mut crate::rng::stream(seed, &[1]))
    } else {
        Ok(complete)
    }
}
