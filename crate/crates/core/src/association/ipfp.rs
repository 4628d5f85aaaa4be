use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const IPFP_TOL: f64 = 1e-10;
pub const IPFP_MAX_ITER: usize = 10_000;
const IPFP_POLISH_SWEEPS: usize = 200;

/// Joint J x J table with the given row and column margins whose adjacent-cell
/// local odds ratios are `exp(log_theta)`.
///
/// The seed carries the target odds ratios (`exp` of the cumulative sums of
/// `log_theta`) on top of the independence table; alternating row and column
/// scaling then fixes the margins without touching any odds ratio.
pub fn ipfp_joint_probabilities(row: &[f64], col: &[f64], log_theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let j = row.len();
    if j < 2 || col.len() != j || log_theta.nrows() != j - 1 || log_theta.ncols() != j - 1 {
        return Err(Error::InvalidParameter("IPFP margins and odds block disagree in size".into()));
    }
    if row.iter().chain(col).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("IPFP margins must be positive".into()));
    }
    if log_theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("log odds ratios must be finite".into()));
    }

    let mut s = DMatrix::<f64>::zeros(j, j);
    for a in 1..j {
        for b in 1..j {
            s[(a, b)] = s[(a - 1, b)] + s[(a, b - 1)] - s[(a - 1, b - 1)] + log_theta[(a - 1, b - 1)];
        }
    }
    let shift = s.max();
    let mut p = DMatrix::from_fn(j, j, |a, b| row[a] * col[b] * (s[(a, b)] - shift).exp());

    let mut residual = f64::INFINITY;
    for _ in 0..IPFP_MAX_ITER {
        for a in 0..j {
            let r: f64 = p.row(a).sum();
            let f = row[a] / r;
            p.row_mut(a).iter_mut().for_each(|v| *v *= f);
        }
        for b in 0..j {
            let c: f64 = p.column(b).sum();
            let f = col[b] / c;
            p.column_mut(b).iter_mut().for_each(|v| *v *= f);
        }
        residual = row_residual(&p, row);
        if residual < IPFP_TOL {
            polish(&mut p, row, col, residual);
            return Ok(p);
        }
    }
    Err(Error::Ipfp { residual })
}

fn row_residual(p: &DMatrix<f64>, row: &[f64]) -> f64 {
    (0..row.len()).map(|a| (p.row(a).sum() - row[a]).abs()).fold(0.0, f64::max)
}

/// Extra sweeps down to rounding level, kept only while they still help.
fn polish(p: &mut DMatrix<f64>, row: &[f64], col: &[f64], mut residual: f64) {
    for _ in 0..IPFP_POLISH_SWEEPS {
        if residual <= f64::EPSILON * 0.5 {
            return;
        }
        let mut next = p.clone();
        for (a, &target) in row.iter().enumerate() {
            let f = target / next.row(a).sum();
            next.row_mut(a).iter_mut().for_each(|v| *v *= f);
        }
        for (b, &target) in col.iter().enumerate() {
            let f = target / next.column(b).sum();
            next.column_mut(b).iter_mut().for_each(|v| *v *= f);
        }
        let r = row_residual(&next, row);
        if r >= residual {
            return;
        }
        *p = next;
        residual = r;
    }
}

/// Adjacent-cell log local odds ratios of a J x J table.
pub fn local_log_odds(p: &DMatrix<f64>) -> DMatrix<f64> {
    let j = p.nrows();
    DMatrix::from_fn(j - 1, j - 1, |a, b| {
        (p[(a, b)] * p[(a + 1, b + 1)] / (p[(a, b + 1)] * p[(a + 1, b)])).ln()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn independence_table() {
        let p = ipfp_joint_probabilities(&[0.5, 0.5], &[0.5, 0.5], &DMatrix::zeros(1, 1)).unwrap();
        for v in p.iter() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        // p11^2 / (0.5 - p11)^2 = 4  =>  p11 = 1/3
        let p = ipfp_joint_probabilities(&[0.5, 0.5], &[0.5, 0.5], &DMatrix::from_element(1, 1, 4f64.ln()))
            .unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[(1, 1)], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[(0, 1)], 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn three_by_three_keeps_odds_and_margins() {
        let row = [0.2, 0.5, 0.3];
        let col = [0.4, 0.35, 0.25];
        let lt = DMatrix::from_row_slice(2, 2, &[0.8, -0.3, 0.1, 1.2]);
        let p = ipfp_joint_probabilities(&row, &col, &lt).unwrap();
        for a in 0..3 {
            assert!((p.row(a).sum() - row[a]).abs() < 1e-10);
            assert!((p.column(a).sum() - col[a]).abs() < 1e-10);
        }
        assert!((local_log_odds(&p) - lt).abs().max() < 1e-8);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ipfp_joint_probabilities(&[0.5, 0.5], &[1.0, 0.0], &DMatrix::zeros(1, 1)).is_err());
        assert!(ipfp_joint_probabilities(&[0.5, 0.5], &[0.5, 0.5], &DMatrix::zeros(2, 2)).is_err());
    }
}
