//! Acceptance run: every criterion at its stated tolerance, one PASS/FAIL line
//! each. The three Monte Carlo studies are run once and shared between the
//! criteria that read them.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::enumeration::{augmentation_errors, exchangeable_block, K};
use common::pooled_ml::{ml_fit, pooled, sandwich};
use common::tables::{errors, random_margin};
use common::{complete_panel, max_abs_diff, observed_panel, ALL_STRUCTURES};
use nalgebra::DMatrix;
use ordgee::association::{ipfp_joint_probabilities, AssociationEstimate, AssociationSpec};
use ordgee::estimators::{fit, FitOptions, FitResult, Method};
use ordgee::missingness::ModelConfig;
use ordgee::rng::stream;
use ordgee::simulation::{run_study, Arm, ReportRow, Scenario, SimReport, Status, Study};
use ordgee::{Execution, OrdinalPanel};
use rand::Rng;

const B01: usize = 0;
const X: usize = 2;
const Z: usize = 3;
const PARAMS: [&str; 4] = ["b01", "b02", "X", "Z"];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

fn spec(s: &str) -> AssociationSpec {
    s.parse().unwrap()
}

fn run(panel: &OrdinalPanel, method: Method, s: &str) -> FitResult {
    fit(panel, method, spec(s), &ModelConfig::default(), &FitOptions::default()).unwrap()
}

fn row<'a>(report: &'a SimReport, arm: &str, s: &str) -> &'a ReportRow {
    report
        .row(arm, spec(s))
        .unwrap_or_else(|| panic!("no {arm} row for {s}"))
}

fn study(n: usize, reps: usize, seed: u64, arms: Vec<Arm>, structures: &[&str]) -> SimReport {
    let scenario = Scenario {
        n,
        reps,
        seed,
        ..Scenario::default()
    };
    let mut study = Study::new(scenario, arms, structures.iter().map(|s| spec(s)).collect());
    study.attempt_factor = 10;
    let clock = Instant::now();
    let report = run_study(&study, Execution::Parallel).unwrap();
    eprintln!(
        "  study n={n} S={reps}: {:.0}s\n{}",
        clock.elapsed().as_secs_f64(),
        report.table()
    );
    report
}

const REPORTED: [&str; 3] = ["corr:ind", "corr:exch", "lor:uniform"];

/// Bias and coverage bands of a block, over every reported structure.
fn bias_and_coverage(report: &SimReport, arm: &str) -> Verdict {
    let mut worst_bias: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in REPORTED {
        let r = row(report, arm, s);
        for k in 0..PARAMS.len() {
            worst_bias = worst_bias.max(r.relative_bias[k].abs());
            lo = lo.min(r.coverage[k]);
            hi = hi.max(r.coverage[k]);
        }
    }
    Verdict::new(
        worst_bias <= 5.0 && lo >= 0.91 && hi <= 0.98,
        format!("{arm}: max |bias| {worst_bias:.1}% (<= 5), coverage {lo:.3}..{hi:.3} (in [0.91, 0.98])"),
    )
}

fn efficiency(report: &SimReport) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in ["corr:exch", "lor:uniform"] {
        let e = &row(report, "Complete", s).relative_efficiency;
        pass &= (1.10..=1.35).contains(&e[Z]);
        pass &= e[..Z].iter().all(|v| (0.95..=1.05).contains(v));
        parts.push(format!("{s} Z {:.2}, others {:.2}/{:.2}/{:.2}", e[Z], e[0], e[1], e[2]));
    }
    Verdict::new(pass, parts.join("; "))
}

fn available_fails(report: &SimReport) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in REPORTED {
        let r = row(report, "Available", s);
        pass &= r.relative_bias[B01] > 50.0 && r.coverage[B01] < 0.5;
        parts.push(format!("{s} bias {:+.0}% coverage {:.2}", r.relative_bias[B01], r.coverage[B01]));
    }
    Verdict::new(pass, format!("b01 {}", parts.join("; ")))
}

fn double_robustness(specified: &SimReport, misspecified: &SimReport) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for arm in ["DRGEE(x-,r+)", "DRGEE(x+,r-)"] {
        let r = row(specified, arm, "lor:uniform");
        let (bx, bz) = (r.relative_bias[X], r.relative_bias[Z]);
        pass &= bx.abs() <= 10.0 && bz.abs() <= 10.0;
        parts.push(format!("{arm} X {bx:+.1}% Z {bz:+.1}%"));
    }
    let worst = REPORTED
        .iter()
        .map(|s| row(misspecified, "DRGEE(x-,r-)", s).relative_bias[X])
        .fold(f64::NEG_INFINITY, f64::max);
    pass &= worst <= -25.0;
    parts.push(format!("DRGEE(x-,r-) X at most {worst:+.1}%"));
    Verdict::new(pass, parts.join("; "))
}

fn reduction_on_complete_data() -> Verdict {
    let panel = complete_panel(200, 5);
    let mut worst: f64 = 0.0;
    let mut converged = true;
    for s in ALL_STRUCTURES {
        let gee = run(&panel, Method::Gee, s);
        converged &= gee.converged;
        for method in [Method::Wgee, Method::Migee, Method::Drgee] {
            let other = run(&panel, method, s);
            converged &= other.converged;
            worst = worst.max(max_abs_diff(&gee.beta.to_vec(), &other.beta.to_vec()));
        }
    }
    Verdict::new(
        converged && worst < 1e-8,
        format!("max |beta difference| {worst:.1e} over 9 structures x 3 methods (< 1e-8)"),
    )
}

fn ipfp_oracle() -> Verdict {
    let mut rng = stream(2024, &[]);
    let (mut margin, mut odds): (f64, f64) = (0.0, 0.0);
    for case in 0..1000 {
        let j = 2 + case % 3;
        let row = random_margin(&mut rng, j);
        let col = random_margin(&mut rng, j);
        let lt = DMatrix::from_fn(j - 1, j - 1, |_, _| rng.random_range(-2.0..2.0));
        let p = ipfp_joint_probabilities(&row, &col, &lt).unwrap();
        let (m, o) = errors(&p, &row, &col, &lt);
        margin = margin.max(m);
        odds = odds.max(o);
    }
    let p = ipfp_joint_probabilities(&[0.5, 0.5], &[0.5, 0.5], &DMatrix::from_element(1, 1, 4f64.ln())).unwrap();
    let closed = (p[(0, 0)] - 1.0 / 3.0).abs();
    Verdict::new(
        margin < 1e-10 && odds < 1e-8 && closed < 1e-12,
        format!("margin {margin:.1e} (< 1e-10), log odds {odds:.1e} (< 1e-8), 2x2 theta=4 {closed:.1e} (< 1e-12)"),
    )
}

fn independence_is_ml() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut converged = true;
    for seed in 0..20 {
        let panel = if seed % 2 == 0 { complete_panel(200, seed) } else { observed_panel(200, seed) };
        let gee = run(&panel, Method::Gee, "corr:ind");
        converged &= gee.converged;
        let oracle = ml_fit(&pooled(&panel), panel.categories(), panel.param_dim());
        worst = worst.max(max_abs_diff(&gee.beta.to_vec(), &oracle));
    }
    Verdict::new(
        converged && worst < 1e-6,
        format!("max |beta difference| {worst:.1e} over 20 data sets (< 1e-6)"),
    )
}

fn augmentation_oracle() -> Verdict {
    let (ind_err, ind_n) = augmentation_errors(&DMatrix::zeros(K, K), &AssociationEstimate::Independence, 1);
    let (r, alpha) = exchangeable_block();
    let (exch_err, exch_n) = augmentation_errors(&r, &alpha, 2);
    let worst = ind_err.max(exch_err);
    Verdict::new(
        worst < 1e-12 && ind_n >= 100 && exch_n >= 100,
        format!("max difference {worst:.1e} over {} cases (< 1e-12)", ind_n + exch_n),
    )
}

fn sandwich_check(specified: &SimReport) -> Verdict {
    let panel = complete_panel(200, 5);
    let gee = run(&panel, Method::Gee, "corr:ind");
    let oracle = sandwich(&pooled(&panel), &gee.beta.to_vec(), panel.categories());
    let hand = (&gee.vcov - &oracle).amax() / oracle.amax();
    let mut reduction: f64 = 0.0;
    for s in ALL_STRUCTURES {
        let base = run(&panel, Method::Gee, s);
        for method in [Method::Wgee, Method::Migee, Method::Drgee] {
            reduction = reduction.max((&base.vcov - &run(&panel, method, s).vcov).amax());
        }
    }
    let (lo, hi) = REPORTED
        .iter()
        .flat_map(|s| row(specified, "DRGEE(x+,r+)", s).coverage.clone())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(c), h.max(c)));
    Verdict::new(
        hand < 1e-8 && reduction < 1e-8 && lo >= 0.91 && hi <= 0.98,
        format!(
            "hand-computed sandwich {hand:.1e} (relative, < 1e-8), complete-data reduction {reduction:.1e} (< 1e-8), DRGEE(x+,r+) coverage {lo:.3}..{hi:.3} (in [0.91, 0.98])"
        ),
    )
}

fn convergence_rates(report: &SimReport) -> Verdict {
    let unst = report.structure(spec("corr:unst")).unwrap();
    let unif = report.structure(spec("lor:uniform")).unwrap();
    Verdict::new(
        unst.convergence_rate < 0.5 && unst.status != Status::Ok && unif.convergence_rate >= 0.9,
        format!(
            "corr:unst CR {:.2} ({} of {}, {:?}), lor:uniform CR {:.2} ({} of {})",
            unst.convergence_rate,
            unst.successes,
            unst.attempts,
            unst.status,
            unif.convergence_rate,
            unif.successes,
            unif.attempts
        ),
    )
}

fn main() -> ExitCode {
    let clock = Instant::now();
    eprintln!("correctly specified study");
    let specified = study(
        300,
        200,
        20_240,
        vec![Arm::complete(), Arm::drgee(true, true), Arm::drgee(false, true), Arm::drgee(true, false)],
        &REPORTED,
    );
    eprintln!("misspecified study");
    let misspecified = study(300, 200, 20_241, vec![Arm::available(), Arm::drgee(false, false)], &REPORTED);
    eprintln!("small-sample study");
    let small = study(
        50,
        100,
        20_242,
        vec![Arm::complete(), Arm::wgee(true), Arm::drgee(true, true)],
        &["corr:unst", "lor:uniform"],
    );
    let verdicts = [
        ("complete-data sanity", bias_and_coverage(&specified, "Complete")),
        ("efficiency for the time-varying covariate", efficiency(&specified)),
        ("available-data GEE under MAR", available_fails(&misspecified)),
        ("double robustness", double_robustness(&specified, &misspecified)),
        ("reduction to GEE on complete data", reduction_on_complete_data()),
        ("IPFP oracle", ipfp_oracle()),
        ("independence GEE is pooled ML", independence_is_ml()),
        ("augmentation vs enumeration", augmentation_oracle()),
        ("sandwich covariance", sandwich_check(&specified)),
        ("convergence rates at n=50", convergence_rates(&small)),
    ];
    println!();
    for (i, (name, v)) in verdicts.iter().enumerate() {
        println!("{} {:>2}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    let failed = verdicts.iter().filter(|(_, v)| !v.pass).count();
    println!("\n{} of {} criteria pass ({:.0}s)", verdicts.len() - failed, verdicts.len(), clock.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
