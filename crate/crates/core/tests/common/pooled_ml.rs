//! Maximum likelihood for the pooled cumulative-logit model, treating every
//! usable observation as independent.

use nalgebra::{DMatrix, DVector};
use ordgee::model::expit;
use ordgee::OrdinalPanel;

/// One usable observation: category and covariate row `(x, z..)`.
pub struct Obs {
    pub o: usize,
    pub w: Vec<f64>,
}

/// Rows the available-data equations use: response and covariate both observed.
pub fn pooled(panel: &OrdinalPanel) -> Vec<Vec<Obs>> {
    panel
        .subjects()
        .iter()
        .map(|s| {
            s.responses
                .iter()
                .zip(&s.z)
                .filter_map(|(r, z)| {
                    let (o, x) = (r.as_ref()?, s.x?);
                    let mut w = vec![x];
                    w.extend_from_slice(z);
                    Some(Obs { o: *o as usize, w })
                })
                .collect()
        })
        .collect()
}

/// Category probabilities `p_1..p_J` and their gradients in `(a_1..a_{J-1}, b)`.
pub fn probs_and_gradients(theta: &[f64], j: usize, w: &[f64]) -> (Vec<f64>, Vec<DVector<f64>>) {
    let k = j - 1;
    let p = theta.len();
    let eta: f64 = theta[k..].iter().zip(w).map(|(b, x)| b * x).sum();
    // cumulative F_0 = 0, F_1..F_{J-1}, F_J = 1 and their gradients
    let mut cum = vec![0.0];
    let mut dcum = vec![DVector::zeros(p)];
    for m in 0..k {
        let f = expit(theta[m] + eta);
        let g = f * (1.0 - f);
        let mut d = DVector::zeros(p);
        d[m] = g;
        for (c, x) in w.iter().enumerate() {
            d[k + c] = g * x;
        }
        cum.push(f);
        dcum.push(d);
    }
    cum.push(1.0);
    dcum.push(DVector::zeros(p));
    let probs = (1..=j).map(|c| cum[c] - cum[c - 1]).collect();
    let grads = (1..=j).map(|c| &dcum[c] - &dcum[c - 1]).collect();
    (probs, grads)
}

/// Per-subject score contributions.
pub fn score(data: &[Vec<Obs>], theta: &[f64], j: usize) -> Vec<DVector<f64>> {
    data.iter()
        .map(|subject| {
            let mut s = DVector::zeros(theta.len());
            for ob in subject {
                let (p, g) = probs_and_gradients(theta, j, &ob.w);
                s += &g[ob.o - 1] / p[ob.o - 1];
            }
            s
        })
        .collect()
}

pub fn expected_information(data: &[Vec<Obs>], theta: &[f64], j: usize) -> DMatrix<f64> {
    let mut info = DMatrix::zeros(theta.len(), theta.len());
    for ob in data.iter().flatten() {
        let (p, g) = probs_and_gradients(theta, j, &ob.w);
        for c in 0..j {
            info += &g[c] * g[c].transpose() / p[c];
        }
    }
    info
}

/// Fisher scoring to a score of at most 1e-12.
pub fn ml_fit(data: &[Vec<Obs>], j: usize, p: usize) -> Vec<f64> {
    let mut theta: Vec<f64> = (0..p).map(|m| if m < j - 1 { m as f64 - 0.5 } else { 0.0 }).collect();
    for _ in 0..200 {
        let u: DVector<f64> = score(data, &theta, j).iter().sum();
        if u.amax() < 1e-12 {
            return theta;
        }
        let step = expected_information(data, &theta, j).lu().solve(&u).unwrap();
        theta.iter_mut().zip(step.iter()).for_each(|(t, d)| *t += d);
    }
    panic!("oracle did not converge");
}

/// Robust sandwich of the pooled fit at `theta`.
pub fn sandwich(data: &[Vec<Obs>], theta: &[f64], j: usize) -> DMatrix<f64> {
    let bread = expected_information(data, theta, j).try_inverse().unwrap();
    let meat: DMatrix<f64> = score(data, theta, j).iter().map(|s| s * s.transpose()).sum();
    &bread * meat * &bread
}
