//! Estimators checked against a hand-written maximum likelihood fit of the
//! pooled cumulative-logit model, and against each other on complete data.

mod common;

use common::pooled_ml::{ml_fit, pooled, sandwich};
use common::{complete_panel, max_abs_diff, observed_panel, ALL_STRUCTURES};
use nalgebra::DMatrix;
use ordgee::association::AssociationSpec;
use ordgee::estimators::{fit, FitOptions, FitResult, Method, ScoreCorrection};
use ordgee::missingness::ModelConfig;
use ordgee::{Execution, OrdinalPanel};

fn run(panel: &OrdinalPanel, method: Method, spec: &str, options: &FitOptions) -> FitResult {
    fit(panel, method, spec.parse().unwrap(), &ModelConfig::default(), options).unwrap()
}

#[test]
fn independence_gee_is_pooled_maximum_likelihood() {
    let options = FitOptions::default();
    for seed in 0..20 {
        let panel = if seed % 2 == 0 { complete_panel(200, seed) } else { observed_panel(200, seed) };
        let gee = run(&panel, Method::Gee, "corr:ind", &options);
        assert!(gee.converged);
        let oracle = ml_fit(&pooled(&panel), panel.categories(), panel.param_dim());
        let diff = max_abs_diff(&gee.beta.to_vec(), &oracle);
        assert!(diff < 1e-6, "data set {seed}: max difference {diff:e}");
    }
}

#[test]
fn independence_sandwich_matches_hand_computation() {
    let panel = observed_panel(300, 41);
    let gee = run(&panel, Method::Gee, "corr:ind", &FitOptions::default());
    let oracle = sandwich(&pooled(&panel), &gee.beta.to_vec(), panel.categories());
    let diff = (&gee.vcov - &oracle).amax();
    assert!(diff < 1e-8 * oracle.amax(), "max difference {diff:e}");
}

#[test]
fn all_methods_reduce_to_gee_on_complete_data() {
    let panel = complete_panel(200, 5);
    let options = FitOptions::default();
    for spec in ALL_STRUCTURES {
        let gee = run(&panel, Method::Gee, spec, &options);
        assert!(gee.converged, "{spec}");
        for method in [Method::Wgee, Method::Migee, Method::Drgee] {
            let other = run(&panel, method, spec, &options);
            assert!(other.converged, "{method} {spec}");
            let diff = max_abs_diff(&gee.beta.to_vec(), &other.beta.to_vec());
            assert!(diff < 1e-8, "{method} {spec}: coefficients differ by {diff:e}");
            let vdiff = (&gee.vcov - &other.vcov).amax();
            assert!(vdiff < 1e-8, "{method} {spec}: covariances differ by {vdiff:e}");
        }
    }
}

fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn derivative_and_cross_product_corrections_agree() {
    let panel = observed_panel(600, 77);
    let cp = FitOptions::default();
    let fd = FitOptions {
        correction: ScoreCorrection::FiniteDifference,
        ..FitOptions::default()
    };
    for (method, spec) in [(Method::Wgee, "corr:ind"), (Method::Wgee, "corr:exch"), (Method::Drgee, "lor:uniform")] {
        let a = run(&panel, method, spec, &cp);
        let b = run(&panel, method, spec, &fd);
        assert!(a.converged && b.converged, "{method} {spec}");
        assert_eq!(a.beta, b.beta);
        let rel = relative_frobenius(&b.vcov, &a.vcov);
        assert!(rel < 0.10, "{method} {spec}: relative Frobenius distance {rel}");
    }
}

#[test]
fn converged_fits_are_stationary_with_valid_covariance() {
    let panel = observed_panel(300, 3);
    let options = FitOptions {
        imputations: 3,
        ..FitOptions::default()
    };
    for method in [Method::Gee, Method::Wgee, Method::Migee, Method::Drgee] {
        for spec in ["corr:ind", "corr:exch", "lor:uniform"] {
            let r = run(&panel, method, spec, &options);
            assert!(r.converged, "{method} {spec}: {:?}", r.diagnostics.failure);
            if method != Method::Migee {
                assert!(r.score_norm < 1e-8, "{method} {spec}: score norm {:e}", r.score_norm);
            }
            let asym = (&r.vcov - r.vcov.transpose()).amax();
            assert!(asym <= 1e-12 * r.vcov.amax(), "{method} {spec}: asymmetry {asym:e}");
            let eig = r.vcov.clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() > 0.0, "{method} {spec}: eigenvalues {eig}");
        }
    }
}

#[test]
fn parallel_and_sequential_fits_are_identical() {
    let panel = observed_panel(200, 9);
    for method in [Method::Wgee, Method::Migee, Method::Drgee] {
        let par = run(
            &panel,
            method,
            "corr:exch",
            &FitOptions {
                execution: Execution::Parallel,
                imputations: 3,
                ..FitOptions::default()
            },
        );
        let seq = run(
            &panel,
            method,
            "corr:exch",
            &FitOptions {
                execution: Execution::Sequential,
                imputations: 3,
                ..FitOptions::default()
            },
        );
        assert_eq!(par.beta, seq.beta, "{method}");
        assert_eq!(par.vcov, seq.vcov, "{method}");
    }
}

#[test]
fn fit_is_reproducible_for_a_seed() {
    let panel = observed_panel(150, 21);
    let options = FitOptions {
        imputations: 4,
        seed: 99,
        ..FitOptions::default()
    };
    let a = run(&panel, Method::Migee, "lor:uniform", &options);
    let b = run(&panel, Method::Migee, "lor:uniform", &options);
    assert_eq!(a, b);
    let spec: AssociationSpec = "lor:uniform".parse().unwrap();
    assert_eq!(a.association, spec);
}
