use nalgebra::{DMatrix, DVector};

use crate::linalg::{inverse, symmetric_inverse_or_pinv, symmetrize};

/// `H^{-1} (sum_i q_i q_i') H^{-T}`, or `None` when `H` is singular.
pub fn robust_vcov(info: &DMatrix<f64>, q: &[DVector<f64>]) -> Option<DMatrix<f64>> {
    let hinv = inverse(info)?;
    let p = info.nrows();
    let meat = q.iter().fold(DMatrix::zeros(p, p), |m, v| m + v * v.transpose());
    Some(symmetrize(&(&hinv * meat * hinv.transpose())))
}

/// Projection matrix `(sum_i s1 s2') (sum_i s2 s2')^{-1}` removing the
/// nuisance-score component from the estimating function; the flag reports a
/// pseudo-inverse.
pub fn cross_product_projection(s1: &[DVector<f64>], s2: &[DVector<f64>]) -> (DMatrix<f64>, bool) {
    let p = s1.first().map_or(0, DVector::len);
    let d = s2.first().map_or(0, DVector::len);
    let mut cross = DMatrix::zeros(p, d);
    let mut info = DMatrix::zeros(d, d);
    for (a, b) in s1.iter().zip(s2) {
        cross += a * b.transpose();
        info += b * b.transpose();
    }
    let (inv, pinv) = symmetric_inverse_or_pinv(&info);
    (cross * inv, pinv)
}

/// Projection from a derivative of the summed estimating function with respect
/// to the nuisance parameters and their summed Fisher information:
/// `-(dU/dpsi') I^{-1}`.
pub fn derivative_projection(derivative: &DMatrix<f64>, information: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (inv, pinv) = symmetric_inverse_or_pinv(information);
    (-(derivative * inv), pinv)
}

/// `q_i = s1_i - sum_k P_k s_k,i` for each projection `(P_k, s_k)`.
pub fn corrected_scores(s1: &[DVector<f64>], corrections: &[(DMatrix<f64>, Vec<DVector<f64>>)]) -> Vec<DVector<f64>> {
    s1.iter()
        .enumerate()
        .map(|(i, s)| {
            corrections
                .iter()
                .fold(s.clone(), |q, (proj, scores)| q - proj * &scores[i])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn projection_removes_correlated_component() {
        let s2: Vec<DVector<f64>> = (0..20).map(|i| DVector::from_vec(vec![(i as f64 - 9.5) / 5.0])).collect();
        let s1: Vec<DVector<f64>> = s2.iter().map(|v| DVector::from_vec(vec![3.0 * v[0]])).collect();
        let (proj, pinv) = cross_product_projection(&s1, &s2);
        assert!(!pinv);
        assert_abs_diff_eq!(proj[(0, 0)], 3.0, epsilon = 1e-12);
        let q = corrected_scores(&s1, &[(proj, s2)]);
        assert!(q.iter().all(|v| v[0].abs() < 1e-12));
    }

    #[test]
    fn identity_bread_gives_meat() {
        let q = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![-1.0, 0.0])];
        let v = robust_vcov(&DMatrix::identity(2, 2), &q).unwrap();
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 4.0]));
    }
}
