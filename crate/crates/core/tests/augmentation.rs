//! The doubly robust augmentation term against enumeration of every completion.

mod common;

use common::enumeration::{augmentation_errors, exchangeable_block, K};
use nalgebra::DMatrix;
use ordgee::association::AssociationEstimate;

fn check(r: &DMatrix<f64>, alpha: &AssociationEstimate, seed: u64) {
    let (err, checked) = augmentation_errors(r, alpha, seed);
    assert!(checked >= 100, "only {checked} cases had a positive definite covariance");
    assert!(err < 1e-12, "max difference {err:e}");
}

#[test]
fn augmentation_matches_enumeration_under_independence() {
    check(&DMatrix::zeros(K, K), &AssociationEstimate::Independence, 1);
}

#[test]
fn augmentation_matches_enumeration_under_exchangeable_correlation() {
    let (r, alpha) = exchangeable_block();
    check(&r, &alpha, 2);
}
