use nalgebra::{DMatrix, DVector};

use super::{pair_count, pair_index, AssociationEstimate, OddsStructure};
use crate::error::{Error, Result};
use crate::panel::OrdinalPanel;

/// Cross-classifications of the responses at each pair of occasions, counting
/// only subjects with both responses observed.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalizedTables {
    pub occasions: usize,
    pub categories: usize,
    /// One J x J table per occasion pair, in [`pair_index`] order.
    pub counts: Vec<DMatrix<f64>>,
}

pub fn build_marginalized_tables(panel: &OrdinalPanel) -> MarginalizedTables {
    let t = panel.occasions();
    let j = panel.categories();
    let mut counts = vec![DMatrix::zeros(j, j); pair_count(t)];
    for s in panel.subjects() {
        for a in 0..s.len() {
            let Some(ra) = s.responses[a] else { continue };
            for b in a + 1..s.len() {
                let Some(rb) = s.responses[b] else { continue };
                let g = pair_index(s.occasions[a], s.occasions[b], t);
                counts[g][(ra as usize - 1, rb as usize - 1)] += 1.0;
            }
        }
    }
    MarginalizedTables {
        occasions: t,
        categories: j,
        counts,
    }
}

const MAX_ITER: usize = 500;

/// Parameter layout of the Poisson loglinear model: per table, J row effects and
/// J-1 column effects, followed by the association parameters.
struct Layout {
    structure: OddsStructure,
    tables: usize,
    j: usize,
    /// Scores are estimated (otherwise fixed at 1..J).
    free_scores: bool,
    /// Association parameters are table-specific.
    per_table: bool,
}

impl Layout {
    fn margins(&self) -> usize {
        self.tables * (2 * self.j - 1)
    }

    fn assoc_block(&self) -> usize {
        1 + if self.free_scores { self.j - 2 } else { 0 }
    }

    fn len(&self) -> usize {
        self.margins() + self.assoc_block() * if self.per_table { self.tables } else { 1 }
    }

    fn assoc_offset(&self, g: usize) -> usize {
        self.margins() + if self.per_table { g * self.assoc_block() } else { 0 }
    }

    fn phi_scores(&self, theta: &[f64], g: usize) -> (f64, Vec<f64>) {
        let off = self.assoc_offset(g);
        let mut nu: Vec<f64> = (1..=self.j).map(|v| v as f64).collect();
        if self.free_scores {
            nu[1..self.j - 1].copy_from_slice(&theta[off + 1..off + self.j - 1]);
        }
        (theta[off], nu)
    }

    /// Linear predictor and its sparse gradient for cell (a, b) of table g.
    fn cell(&self, theta: &[f64], g: usize, a: usize, b: usize, grad: &mut Vec<(usize, f64)>) -> f64 {
        grad.clear();
        let base = g * (2 * self.j - 1);
        let mut eta = theta[base + a];
        grad.push((base + a, 1.0));
        if b > 0 {
            eta += theta[base + self.j + b - 1];
            grad.push((base + self.j + b - 1, 1.0));
        }
        let (phi, nu) = self.phi_scores(theta, g);
        let off = self.assoc_offset(g);
        eta += phi * nu[a] * nu[b];
        grad.push((off, nu[a] * nu[b]));
        if self.free_scores {
            for k in 1..self.j - 1 {
                let d = phi * (if a == k { nu[b] } else { 0.0 } + if b == k { nu[a] } else { 0.0 });
                grad.push((off + k, d));
            }
        }
        eta
    }
}

fn layout_for(structure: OddsStructure, tables: usize, j: usize) -> Layout {
    let free = j > 2
        && matches!(
            structure,
            OddsStructure::CategoryExchangeable | OddsStructure::RcUnstructured
        );
    let per_table = matches!(
        structure,
        OddsStructure::TimeExchangeable | OddsStructure::RcUnstructured
    );
    Layout {
        structure,
        tables,
        j,
        free_scores: free,
        per_table,
    }
}

struct Fit {
    theta: Vec<f64>,
}

fn poisson_fit(layout: &Layout, y: &[DMatrix<f64>], start: Vec<f64>) -> Result<Fit> {
    let j = layout.j;
    let n_par = layout.len();
    let total: f64 = y.iter().map(|t| t.sum()).sum();
    let tol = 1e-9 * (1.0 + total);
    let mut grad_buf = Vec::with_capacity(n_par);

    let evaluate = |theta: &[f64], want_derivs: bool, buf: &mut Vec<(usize, f64)>| {
        let mut ll = 0.0;
        let mut score = DVector::zeros(if want_derivs { n_par } else { 0 });
        let mut info = DMatrix::zeros(if want_derivs { n_par } else { 0 }, if want_derivs { n_par } else { 0 });
        for (g, table) in y.iter().enumerate() {
            for a in 0..j {
                for b in 0..j {
                    let eta = layout.cell(theta, g, a, b, buf);
                    let m = eta.exp();
                    let obs = table[(a, b)];
                    ll += obs * eta - m;
                    if want_derivs {
                        for &(k, dk) in buf.iter() {
                            score[k] += (obs - m) * dk;
                            for &(l, dl) in buf.iter() {
                                info[(k, l)] += m * dk * dl;
                            }
                        }
                    }
                }
            }
        }
        (ll, score, info)
    };

    let mut theta = start;
    let mut lambda: f64 = 1e-4;
    let mut trace = Vec::new();
    let (mut ll, mut score, mut info) = evaluate(&theta, true, &mut grad_buf);
    for iter in 0..MAX_ITER {
        let gmax = score.iter().fold(0.0_f64, |a, v: &f64| a.max(v.abs()));
        trace.push(gmax);
        if gmax < tol {
            return Ok(Fit { theta });
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = info.clone();
            for k in 0..n_par {
                damped[(k, k)] += lambda * (info[(k, k)] + 1e-8);
            }
            let step = match damped.clone().cholesky() {
                Some(c) => c.solve(&score),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
            let (cll, _, _) = evaluate(&cand, false, &mut grad_buf);
            if cll.is_finite() && cll >= ll - 1e-12 * ll.abs().max(1.0) {
                theta = cand;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            return Err(Error::AssociationFit {
                iterations: iter,
                message: format!("no ascent step for {:?}", layout.structure),
                trace,
            });
        }
        (ll, score, info) = evaluate(&theta, true, &mut grad_buf);
    }
    Err(Error::AssociationFit {
        iterations: MAX_ITER,
        message: format!("Poisson iterations did not converge for {:?}", layout.structure),
        trace,
    })
}

/// Margins-only starting values (the independence fit).
fn independence_start(layout: &Layout, y: &[DMatrix<f64>]) -> Vec<f64> {
    let j = layout.j;
    let mut theta = vec![0.0; layout.len()];
    for (g, table) in y.iter().enumerate() {
        let n: f64 = table.sum();
        let rows: Vec<f64> = (0..j).map(|a| table.row(a).sum()).collect();
        let cols: Vec<f64> = (0..j).map(|b| table.column(b).sum()).collect();
        let base = g * (2 * j - 1);
        for a in 0..j {
            theta[base + a] = (rows[a] * cols[0] / n).ln();
        }
        for b in 1..j {
            theta[base + j + b - 1] = (cols[b] / cols[0]).ln();
        }
    }
    for g in 0..if layout.per_table { layout.tables } else { 1 } {
        let off = layout.assoc_offset(g);
        if layout.free_scores {
            for k in 1..j - 1 {
                theta[off + k] = (k + 1) as f64;
            }
        }
    }
    theta
}

/// Add 0.5 to every cell of any table that contains an empty cell.
fn continuity_adjusted(tables: &MarginalizedTables) -> Vec<DMatrix<f64>> {
    tables
        .counts
        .iter()
        .map(|t| {
            if t.iter().any(|&v| v <= 0.0) {
                t.add_scalar(0.5)
            } else {
                t.clone()
            }
        })
        .collect()
}

/// Poisson maximum likelihood fit of the row-column association model to the
/// marginalized tables (treated as independent), returning the implied log
/// local odds ratios `phi (nu_j - nu_{j+1})(nu_j' - nu_{j'+1})` per pair.
pub fn fit_rc_loglinear(tables: &MarginalizedTables, structure: OddsStructure) -> Result<AssociationEstimate> {
    let j = tables.categories;
    let l = tables.counts.len();
    if l == 0 {
        return Err(Error::InsufficientData("local odds need at least two occasions".into()));
    }
    let y = continuity_adjusted(tables);
    let layout = layout_for(structure, l, j);

    let theta = if layout.free_scores {
        let fixed = layout_for(
            if layout.per_table {
                OddsStructure::TimeExchangeable
            } else {
                OddsStructure::Uniform
            },
            l,
            j,
        );
        let warm = poisson_fit(&fixed, &y, independence_start(&fixed, &y))?;
        let mut start = independence_start(&layout, &y);
        start[..layout.margins()].copy_from_slice(&warm.theta[..fixed.margins()]);
        let groups = if layout.per_table { l } else { 1 };
        for g in 0..groups {
            start[layout.assoc_offset(g)] = warm.theta[fixed.assoc_offset(g)];
        }
        poisson_fit(&layout, &y, start)?.theta
    } else {
        poisson_fit(&layout, &y, independence_start(&layout, &y))?.theta
    };

    let groups = if layout.per_table { l } else { 1 };
    let mut phi = Vec::with_capacity(groups);
    let mut scores = Vec::with_capacity(groups);
    for g in 0..groups {
        let (p, nu) = layout.phi_scores(&theta, g);
        phi.push(p);
        scores.push(nu);
    }
    let log_theta = (0..l)
        .map(|g| {
            let k = if layout.per_table { g } else { 0 };
            let nu = &scores[k];
            DMatrix::from_fn(j - 1, j - 1, |a, b| phi[k] * (nu[a] - nu[a + 1]) * (nu[b] - nu[b + 1]))
        })
        .collect();
    Ok(AssociationEstimate::LocalOdds {
        structure,
        occasions: tables.occasions,
        log_theta,
        phi,
        scores,
    })
}
