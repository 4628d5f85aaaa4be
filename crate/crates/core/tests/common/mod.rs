//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod enumeration;
pub mod pooled_ml;
pub mod tables;

use ordgee::rng::stream;
use ordgee::simulation::{generate_panel, inject_missingness, Scenario};
use ordgee::OrdinalPanel;

pub const ALL_STRUCTURES: [&str; 9] = [
    "corr:ind",
    "corr:exch",
    "corr:1dep",
    "corr:banded",
    "corr:unst",
    "lor:uniform",
    "lor:time-exch",
    "lor:cat-exch",
    "lor:rc",
];

pub fn complete_panel(n: usize, seed: u64) -> OrdinalPanel {
    let sc = Scenario { n, ..Scenario::default() };
    generate_panel(&sc, &mut stream(seed, &[0])).unwrap()
}

pub fn observed_panel(n: usize, seed: u64) -> OrdinalPanel {
    let sc = Scenario { n, ..Scenario::default() };
    let full = generate_panel(&sc, &mut stream(seed, &[0])).unwrap();
    inject_missingness(&full, &sc, &mut stream(seed, &[1])).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
