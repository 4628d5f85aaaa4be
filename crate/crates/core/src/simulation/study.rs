use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::association::AssociationSpec;
use crate::error::{Error, Result};
use crate::estimators::{fit, FitOptions, Method};
use crate::missingness::ModelConfig;
use crate::panel::OrdinalPanel;
use crate::parallel::{map_indexed, Execution};
use crate::rng::{derive_seed, stream};

use super::generate::{generate_panel, inject_missingness, Scenario};
use super::metrics::{compute_metrics, ParamMetrics};

/// Version of the report JSON layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Convergence rate below which a structure is reported as degraded.
pub const DEGRADED_RATE: f64 = 0.5;

/// Convergence rate below which a structure is reported as infeasible.
pub const INFEASIBLE_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// The panel before missing values are injected.
    Complete,
    /// The panel with missing values.
    Observed,
}

/// One estimator in a study: a method, the data it sees and whether each
/// nuisance model is correctly specified (dropping `z1` otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub method: Method,
    pub data: DataSource,
    pub x_model_correct: bool,
    pub r_model_correct: bool,
}

fn sign(correct: bool) -> char {
    if correct {
        '+'
    } else {
        '-'
    }
}

impl Arm {
    fn new(label: String, method: Method, data: DataSource, x: bool, r: bool) -> Self {
        Arm {
            label,
            method,
            data,
            x_model_correct: x,
            r_model_correct: r,
        }
    }

    pub fn complete() -> Self {
        Self::new("Complete".into(), Method::Gee, DataSource::Complete, true, true)
    }

    pub fn available() -> Self {
        Self::new("Available".into(), Method::Gee, DataSource::Observed, true, true)
    }

    pub fn wgee(r: bool) -> Self {
        Self::new(format!("WGEE(r{})", sign(r)), Method::Wgee, DataSource::Observed, true, r)
    }

    pub fn migee(x: bool) -> Self {
        Self::new(format!("MIGEE(x{})", sign(x)), Method::Migee, DataSource::Observed, x, true)
    }

    pub fn drgee(x: bool, r: bool) -> Self {
        Self::new(format!("DRGEE(x{},r{})", sign(x), sign(r)), Method::Drgee, DataSource::Observed, x, r)
    }

    /// Nuisance-model configuration for this arm.
    pub fn config(&self, base: &ModelConfig) -> ModelConfig {
        let mut config = base.clone();
        if !self.x_model_correct {
            config = config.without_z1_in_covariate();
        }
        if !self.r_model_correct {
            config = config.without_z1_in_x_missingness();
        }
        config
    }
}

/// A Monte Carlo study: a scenario, the estimators and the working structures.
#[derive(Debug, Clone)]
pub struct Study {
    pub scenario: Scenario,
    pub arms: Vec<Arm>,
    pub structures: Vec<AssociationSpec>,
    pub base_config: ModelConfig,
    pub options: FitOptions,
    /// Data sets generated per structure before giving up, as a multiple of `reps`.
    pub attempt_factor: usize,
}

impl Study {
    pub fn new(scenario: Scenario, arms: Vec<Arm>, structures: Vec<AssociationSpec>) -> Self {
        Study {
            scenario,
            arms,
            structures,
            base_config: ModelConfig::default(),
            options: FitOptions::default(),
            attempt_factor: 100,
        }
    }

    fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.arms.is_empty() || self.structures.is_empty() {
            return Err(Error::Config("a study needs at least one method and one structure".into()));
        }
        if self.attempt_factor == 0 {
            return Err(Error::Config("attempt factor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Degraded,
    Infeasible,
}

/// Convergence bookkeeping for one working structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSummary {
    pub structure: String,
    pub label: String,
    pub attempts: usize,
    pub successes: usize,
    pub convergence_rate: f64,
    pub status: Status,
}

/// Metrics of one arm under one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub structure: String,
    pub label: String,
    pub replications: usize,
    pub relative_bias: Vec<f64>,
    pub relative_efficiency: Vec<f64>,
    pub coverage: Vec<f64>,
}

impl ReportRow {
    fn new(spec: AssociationSpec, replications: usize, metrics: &[ParamMetrics]) -> Self {
        ReportRow {
            structure: spec.to_string(),
            label: spec.label().into(),
            replications,
            relative_bias: metrics.iter().map(|m| m.relative_bias).collect(),
            relative_efficiency: metrics.iter().map(|m| m.relative_efficiency).collect(),
            coverage: metrics.iter().map(|m| m.coverage).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBlock {
    pub arm: String,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub structures: Vec<StructureSummary>,
    pub blocks: Vec<ReportBlock>,
    /// Share of subject-occasions not fully observed, averaged over generated data sets.
    pub incomplete_share: f64,
}

impl SimReport {
    pub fn structure(&self, spec: AssociationSpec) -> Option<&StructureSummary> {
        let key = spec.to_string();
        self.structures.iter().find(|s| s.structure == key)
    }

    pub fn row(&self, arm: &str, spec: AssociationSpec) -> Option<&ReportRow> {
        let key = spec.to_string();
        self.blocks
            .iter()
            .find(|b| b.arm == arm)
            .and_then(|b| b.rows.iter().find(|r| r.structure == key))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Text table: relative bias, relative efficiency and empirical coverage
    /// blocks side by side, one section per arm.
    pub fn table(&self) -> String {
        let p = self.parameters.len();
        let cell = 8;
        let width = 10 + 3 * (p * cell + 3);
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "");
        for title in ["Relative Bias", "Rel. Efficiency", "Coverage"] {
            let _ = write!(out, " | {:^w$}", title, w = p * cell);
        }
        out.push('\n');
        let _ = write!(out, "{:<10}", "Structure");
        for _ in 0..3 {
            out.push_str(" | ");
            for name in &self.parameters {
                let _ = write!(out, "{name:>cell$}");
            }
        }
        out.push('\n');
        out.push_str(&"-".repeat(width));
        out.push('\n');
        for block in &self.blocks {
            let _ = writeln!(out, "{:^width$}", block.arm);
            for row in &block.rows {
                let _ = write!(out, "{:<10}", row.label);
                for (values, digits) in [(&row.relative_bias, 1), (&row.relative_efficiency, 2), (&row.coverage, 2)] {
                    out.push_str(" | ");
                    for v in values {
                        let _ = write!(out, "{v:>cell$.digits$}");
                    }
                }
                out.push('\n');
            }
        }
        out.push_str(&"-".repeat(width));
        out.push('\n');
        for s in &self.structures {
            let _ = writeln!(
                out,
                "{:<10} CR {:.2} ({} of {} data sets){}",
                s.label,
                s.convergence_rate,
                s.successes,
                s.attempts,
                match s.status {
                    Status::Ok => "",
                    Status::Degraded => "  degraded",
                    Status::Infeasible => "  infeasible",
                }
            );
        }
        out
    }
}

/// Point estimates and standard errors of every arm on one data set.
type ArmEstimates = Vec<(Vec<f64>, Vec<f64>)>;

struct Attempt {
    /// Per structure (in study order): `None` when not evaluated, `Some(None)`
    /// when some arm failed, otherwise every arm's estimates.
    outcomes: Vec<Option<Option<ArmEstimates>>>,
    incomplete_share: f64,
}

fn fit_arms(
    study: &Study,
    complete: &OrdinalPanel,
    observed: &OrdinalPanel,
    spec: AssociationSpec,
    seed: u64,
) -> Option<ArmEstimates> {
    let options = FitOptions {
        seed,
        execution: Execution::Sequential,
        ..study.options.clone()
    };
    let mut out = Vec::with_capacity(study.arms.len());
    for arm in &study.arms {
        let panel = match arm.data {
            DataSource::Complete => complete,
            DataSource::Observed => observed,
        };
        let result = fit(panel, arm.method, spec, &arm.config(&study.base_config), &options).ok()?;
        let se = result.std_errors();
        if !result.converged || se.iter().any(|v| !v.is_finite()) {
            return None;
        }
        out.push((result.beta.to_vec(), se));
    }
    Some(out)
}

fn run_attempt(study: &Study, specs: &[AssociationSpec], index: usize, active: &[bool]) -> Result<Attempt> {
    let seed = study.scenario.seed;
    let a = index as u64;
    let complete = generate_panel(&study.scenario, &mut stream(seed, &[a, 0]))?;
    let observed = inject_missingness(&complete, &study.scenario, &mut stream(seed, &[a, 1]))?;
    let fit_seed = derive_seed(seed, &[a, 2]);
    let outcomes = specs
        .iter()
        .zip(active)
        .map(|(&spec, &on)| on.then(|| fit_arms(study, &complete, &observed, spec, fit_seed)))
        .collect();
    Ok(Attempt {
        outcomes,
        incomplete_share: observed.incomplete_share(),
    })
}

fn status(rate: f64) -> Status {
    if rate < INFEASIBLE_RATE {
        Status::Infeasible
    } else if rate < DEGRADED_RATE {
        Status::Degraded
    } else {
        Status::Ok
    }
}

/// Run the study. For each structure, data sets are generated in order until
/// `reps` of them have every arm converge (a failed data set is replaced by a
/// fresh one) or `attempt_factor * reps` data sets have been tried. All
/// structures see the same sequence of data sets, and the independence fits
/// are evaluated on every data set so efficiencies are paired. Results do not
/// depend on the execution mode or the thread count.
pub fn run_study(study: &Study, execution: Execution) -> Result<SimReport> {
    study.validate()?;
    let reps = study.scenario.reps;
    let cap = reps * study.attempt_factor;
    let ind = AssociationSpec::independence();
    let mut specs = study.structures.clone();
    let ind_pos = match specs.iter().position(|&s| s == ind) {
        Some(p) => p,
        None => {
            specs.push(ind);
            specs.len() - 1
        }
    };
    let k = study.structures.len();
    let mut attempts: Vec<Attempt> = Vec::new();
    let mut successes = vec![0usize; k];
    let mut tried = vec![0usize; k];
    loop {
        let needing: Vec<bool> = (0..k).map(|c| successes[c] < reps && tried[c] < cap).collect();
        if !needing.iter().any(|&b| b) {
            break;
        }
        // size the next batch from the convergence rate observed so far
        let batch = (0..k)
            .filter(|&c| needing[c])
            .map(|c| {
                let rate = if tried[c] == 0 {
                    1.0
                } else {
                    (successes[c] as f64 / tried[c] as f64).max(INFEASIBLE_RATE)
                };
                (((reps - successes[c]) as f64 / rate).ceil() as usize).min(cap - tried[c])
            })
            .max()
            .unwrap_or(1)
            .max(1);
        let start = attempts.len();
        let mut active = needing.clone();
        active.resize(specs.len(), false);
        active[ind_pos] = true;
        let results = map_indexed(execution, batch, |b| run_attempt(study, &specs, start + b, &active));
        for attempt in results {
            let attempt = attempt?;
            for c in 0..k {
                if successes[c] < reps && tried[c] < cap && attempt.outcomes[c].is_some() {
                    tried[c] += 1;
                    if matches!(attempt.outcomes[c], Some(Some(_))) {
                        successes[c] += 1;
                    }
                }
            }
            attempts.push(attempt);
        }
    }
    let truth = study.scenario.beta.to_vec();
    let mut summaries = Vec::with_capacity(k);
    let mut kept: Vec<Vec<(usize, &ArmEstimates)>> = Vec::with_capacity(k);
    for (c, &spec) in study.structures.iter().enumerate() {
        let mut list = Vec::new();
        let mut count = 0;
        for (index, attempt) in attempts.iter().enumerate() {
            if list.len() == reps || count == cap {
                break;
            }
            match &attempt.outcomes[c] {
                Some(Some(est)) => {
                    count += 1;
                    list.push((index, est));
                }
                Some(None) => count += 1,
                None => {}
            }
        }
        let rate = if count == 0 { 0.0 } else { list.len() as f64 / count as f64 };
        summaries.push(StructureSummary {
            structure: spec.to_string(),
            label: spec.label().into(),
            attempts: count,
            successes: list.len(),
            convergence_rate: rate,
            status: status(rate),
        });
        kept.push(list);
    }
    let mut blocks = Vec::with_capacity(study.arms.len());
    for (a, arm) in study.arms.iter().enumerate() {
        let mut rows = Vec::new();
        for (c, &spec) in study.structures.iter().enumerate() {
            if kept[c].is_empty() {
                continue;
            }
            let est: Vec<Vec<f64>> = kept[c].iter().map(|(_, e)| e[a].0.clone()).collect();
            let ses: Vec<Vec<f64>> = kept[c].iter().map(|(_, e)| e[a].1.clone()).collect();
            let mut metrics = compute_metrics(&est, &ses, &ses, &truth)?;
            // efficiency is paired: independence standard errors on the same data sets
            let (mut pe, mut ps, mut pb) = (Vec::new(), Vec::new(), Vec::new());
            for (index, e) in &kept[c] {
                if let Some(Some(reference)) = &attempts[*index].outcomes[ind_pos] {
                    pe.push(e[a].0.clone());
                    ps.push(e[a].1.clone());
                    pb.push(reference[a].1.clone());
                }
            }
            let paired = compute_metrics(&pe, &ps, &pb, &truth).ok();
            for (k, m) in metrics.iter_mut().enumerate() {
                m.relative_efficiency = paired.as_ref().map_or(f64::NAN, |p| p[k].relative_efficiency);
            }
            rows.push(ReportRow::new(spec, est.len(), &metrics));
        }
        blocks.push(ReportBlock {
            arm: arm.label.clone(),
            rows,
        });
    }
    let incomplete_share = if attempts.is_empty() {
        0.0
    } else {
        attempts.iter().map(|a| a.incomplete_share).sum::<f64>() / attempts.len() as f64
    };
    Ok(SimReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: study.scenario.clone(),
        parameters: parameter_labels(&study.scenario),
        truth,
        structures: summaries,
        blocks,
        incomplete_share,
    })
}

fn parameter_labels(scenario: &Scenario) -> Vec<String> {
    let mut names: Vec<String> = (1..scenario.categories()).map(|j| format!("b0{j}")).collect();
    names.push("X".into());
    if scenario.q() == 1 {
        names.push("Z".into());
    } else {
        names.extend((1..=scenario.q()).map(|k| format!("Z{k}")));
    }
    names
}
