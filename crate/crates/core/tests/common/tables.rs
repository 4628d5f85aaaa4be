//! Checks of a joint table against target margins and local odds ratios.

use nalgebra::DMatrix;
use rand::Rng;

pub fn random_margin<R: Rng>(rng: &mut R, j: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..j).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

pub fn log_odds(p: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (p[(a, b)] * p[(a + 1, b + 1)]).ln() - (p[(a, b + 1)] * p[(a + 1, b)]).ln()
}

/// Largest margin error and largest log odds-ratio error of a fitted table.
pub fn errors(p: &DMatrix<f64>, row: &[f64], col: &[f64], lt: &DMatrix<f64>) -> (f64, f64) {
    let j = row.len();
    let mut margin_err: f64 = 0.0;
    for a in 0..j {
        let r: f64 = (0..j).map(|b| p[(a, b)]).sum();
        let c: f64 = (0..j).map(|b| p[(b, a)]).sum();
        margin_err = margin_err.max((r - row[a]).abs()).max((c - col[a]).abs());
    }
    let mut odds_err: f64 = 0.0;
    for a in 0..j - 1 {
        for b in 0..j - 1 {
            odds_err = odds_err.max((log_odds(p, a, b) - lt[(a, b)]).abs());
        }
    }
    (margin_err, odds_err)
}
