use nalgebra::{DMatrix, DVector};

/// Central-difference Jacobian of `objective` at `at`.
///
/// The step for parameter `j` is `step · max(|x_j|, 1)`, so parameters of
/// very different magnitudes can share one `step`.
pub fn finite_difference_jacobian<F>(objective: F, at: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let m = objective(at).len();
    let n = at.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut x = at.clone();
    for j in 0..n {
        let h = step * at[j].abs().max(1.0);
        x[j] = at[j] + h;
        let plus = objective(&x);
        x[j] = at[j] - h;
        let minus = objective(&x);
        x[j] = at[j];
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_objective_is_exact() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -3.0, 0.5, 4.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let f = |x: &DVector<f64>| &a * x + &b;
        let jac = finite_difference_jacobian(f, &DVector::from_vec(vec![0.3, -2.0]), 1e-3);
        assert!((jac - &a).abs().max() < 1e-12);
    }

    #[test]
    fn constant_objective_gives_zero() {
        let f = |_: &DVector<f64>| DVector::from_vec(vec![5.0, 5.0]);
        let jac = finite_difference_jacobian(f, &DVector::from_vec(vec![1.0, 2.0, 3.0]), 1e-4);
        assert_eq!(jac, DMatrix::zeros(2, 3));
    }
}
