//! The doubly robust augmentation term by brute force: a sum over every full
//! completion of a small subject (two occasions, three categories, binary
//! baseline covariate) under the fitted predictive model.

use nalgebra::{DMatrix, DVector};
use ordgee::association::{AssociationEstimate, CorrelationStructure};
use ordgee::estimators::dr_augmentation;
use ordgee::missingness::{ModelConfig, PredictiveModel};
use ordgee::model::expit;
use ordgee::rng::stream;
use ordgee::simulation::{generate_panel, inject_missingness, Scenario};
use ordgee::{RegressionParams, SubjectRecord};
use rand::Rng;

const J: usize = 3;
pub const K: usize = J - 1;

pub fn fitted_model() -> PredictiveModel {
    let sc = Scenario {
        n: 400,
        occasions: 2,
        ..Scenario::default()
    };
    let full = generate_panel(&sc, &mut stream(11, &[0])).unwrap();
    let panel = inject_missingness(&full, &sc, &mut stream(11, &[1])).unwrap();
    assert!(panel.any_missing_x());
    let model = PredictiveModel::fit(&panel, &ModelConfig::default()).unwrap();
    // occasion 1: z ; occasion 2: x, z, earlier z, dummies of the first response
    assert_eq!(model.responses[0].slopes.len(), 1);
    assert_eq!(model.responses[1].slopes.len(), 5);
    model
}

/// Joint probability of a full completion under the fitted conditionals,
/// written out directly: P(O1 | z) P(x | O1, z1) P(O2 | x, z, O1).
pub fn joint(model: &PredictiveModel, s: &SubjectRecord, x: f64, o: [u8; 2]) -> f64 {
    let p1 = model.responses[0].probs(&[s.z[0][0]])[o[0] as usize - 1];
    let cov = model.covariate.as_ref().unwrap();
    let q = cov.prob_one(Some(o[0]), &s.z[0]);
    let px = if x == 1.0 { q } else { 1.0 - q };
    let row2 = [
        x,
        s.z[1][0],
        s.z[0][0],
        f64::from(u8::from(o[0] == 1)),
        f64::from(u8::from(o[0] == 2)),
    ];
    let p2 = model.responses[1].probs(&row2)[o[1] as usize - 1];
    p1 * px * p2
}

pub fn mu(beta: &RegressionParams, x: f64, z: f64) -> [f64; K] {
    let eta = beta.beta_x() * x + beta.beta_z()[0] * z;
    let f1 = expit(beta.intercepts()[0] + eta);
    let f2 = expit(beta.intercepts()[1] + eta);
    [f1, f2 - f1]
}

/// d mu / d (b01, b02, bx, bz) at one occasion.
pub fn jacobian(beta: &RegressionParams, x: f64, z: f64) -> DMatrix<f64> {
    let eta = beta.beta_x() * x + beta.beta_z()[0] * z;
    let g = |b: f64| {
        let f = expit(b + eta);
        f * (1.0 - f)
    };
    let (g1, g2) = (g(beta.intercepts()[0]), g(beta.intercepts()[1]));
    DMatrix::from_row_slice(2, 4, &[g1, 0.0, g1 * x, g1 * z, -g1, g2, (g2 - g1) * x, (g2 - g1) * z])
}

/// Working covariance with correlation `r[(j, l)]` between indicator `j` of
/// the first occasion and indicator `l` of the second.
pub fn working_inverse(beta: &RegressionParams, x: f64, s: &SubjectRecord, r: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m: Vec<[f64; K]> = (0..2).map(|t| mu(beta, x, s.z[t][0])).collect();
    let mut v = DMatrix::zeros(2 * K, 2 * K);
    for a in 0..2 {
        for b in 0..2 {
            for j in 0..K {
                for l in 0..K {
                    v[(a * K + j, b * K + l)] = if a == b {
                        if j == l {
                            m[a][j] * (1.0 - m[a][j])
                        } else {
                            -m[a][j] * m[a][l]
                        }
                    } else {
                        let rho = if a < b { r[(j, l)] } else { r[(l, j)] };
                        rho * (m[a][j] * (1.0 - m[a][j])).sqrt() * (m[b][l] * (1.0 - m[b][l])).sqrt()
                    };
                }
            }
        }
    }
    v.cholesky().map(|c| c.inverse())
}

pub fn brute_force(
    beta: &RegressionParams,
    s: &SubjectRecord,
    delta: &DMatrix<f64>,
    model: &PredictiveModel,
    r: &DMatrix<f64>,
    integrate_x: bool,
) -> Option<DVector<f64>> {
    let mut total = DVector::zeros(4);
    for b in 0..2 {
        if (0..2).all(|a| delta[(a, b)] == 1.0) {
            continue;
        }
        // information available to the missingness of occasion b
        let known_first = s.responses[0].is_some();
        let xs: Vec<f64> = if integrate_x { vec![0.0, 1.0] } else { vec![s.x.unwrap()] };
        let mut terms = Vec::new();
        for &x in &xs {
            for o1 in 1..=J as u8 {
                if known_first && Some(o1) != s.responses[0] {
                    continue;
                }
                for o2 in 1..=J as u8 {
                    terms.push((x, [o1, o2], joint(model, s, x, [o1, o2])));
                }
            }
        }
        let norm: f64 = terms.iter().map(|t| t.2).sum();
        for (x, o, w) in terms {
            let d = DMatrix::from_fn(2 * K, 4, |row, col| {
                let t = row / K;
                jacobian(beta, x, s.z[t][0])[(row % K, col)]
            });
            let winv = working_inverse(beta, x, s, r)?;
            let weighted = DMatrix::from_fn(2 * K, 2 * K, |i, j| winv[(i, j)] * (1.0 - delta[(i / K, j / K)]));
            let m = mu(beta, x, s.z[b][0]);
            let mut resid = DVector::zeros(K);
            for j in 0..K {
                resid[j] = f64::from(u8::from(o[b] as usize == j + 1)) - m[j];
            }
            let cols = (d.transpose() * weighted).columns(b * K, K).into_owned();
            total += cols * resid * (w / norm);
        }
    }
    Some(total)
}

pub fn random_subject<R: Rng>(rng: &mut R, pattern: usize) -> SubjectRecord {
    let cat = |rng: &mut R| rng.random_range(1..=J as u8);
    let o1 = cat(rng);
    let o2 = cat(rng);
    let x = f64::from(u8::from(rng.random::<bool>()));
    let (responses, x) = match pattern {
        0 => (vec![Some(o1), None], None),
        1 => (vec![Some(o1), Some(o2)], None),
        2 => (vec![None, Some(o2)], Some(x)),
        3 => (vec![Some(o1), None], Some(x)),
        4 => (vec![None, None], None),
        _ => (vec![Some(o1), Some(o2)], Some(x)),
    };
    SubjectRecord {
        id: "s".into(),
        occasions: vec![0, 1],
        responses,
        x,
        z: vec![vec![rng.random_range(-1.0..1.0)], vec![rng.random_range(-1.0..1.0)]],
    }
}

pub fn random_delta<R: Rng>(rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |_, _| match rng.random_range(0..3) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.2..3.0),
    })
}

/// Largest difference between the library's augmentation and the enumeration
/// over 120 random cases, and the number of cases the oracle covers.
pub fn augmentation_errors(r: &DMatrix<f64>, alpha: &AssociationEstimate, seed: u64) -> (f64, usize) {
    let model = fitted_model();
    let mut rng = stream(seed, &[]);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for case in 0..120 {
        let beta = RegressionParams::new(
            vec![rng.random_range(-0.8..-0.2), rng.random_range(0.3..0.9)],
            rng.random_range(-0.5..0.5),
            vec![rng.random_range(-0.5..0.5)],
        )
        .unwrap();
        let s = random_subject(&mut rng, case % 6);
        let delta = random_delta(&mut rng);
        let integrate_x = s.x.is_none() || rng.random::<bool>();
        let got = dr_augmentation(&s, &beta, alpha, &delta, &model, integrate_x).unwrap();
        // the library shrinks a covariance that is not positive definite; the
        // oracle only covers the plain inverse
        let Some(want) = brute_force(&beta, &s, &delta, &model, r, integrate_x) else {
            continue;
        };
        worst = worst.max((&got - &want).amax());
        checked += 1;
    }
    (worst, checked)
}

pub fn exchangeable_block() -> (DMatrix<f64>, AssociationEstimate) {
    let r = DMatrix::from_row_slice(K, K, &[0.2, 0.03, -0.05, 0.15]);
    let alpha = AssociationEstimate::Correlation {
        structure: CorrelationStructure::Exchangeable,
        occasions: 2,
        blocks: vec![r.clone()],
    };
    (r, alpha)
}

