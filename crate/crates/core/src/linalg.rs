//! Small dense linear algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Solves `a x = b` in place for a row-major `k x k` matrix over any scalar.
/// Pivoting uses the values only, so derivatives follow the same elimination.
pub fn solve_in_place<S: Scalar>(a: &mut [S], b: &mut [S], k: usize) -> Result<()> {
    debug_assert_eq!(a.len(), k * k);
    debug_assert_eq!(b.len(), k);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.value().abs())).max(f64::MIN_POSITIVE);
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&p, &q| a[p * k + col].value().abs().total_cmp(&a[q * k + col].value().abs()))
            .expect("non-empty range");
        if a[piv * k + col].value().abs() <= 1e-14 * scale {
            return Err(Error::RankDeficient(format!("pivot {col} of a {k}x{k} system vanishes")));
        }
        if piv != col {
            for j in 0..k {
                a.swap(col * k + j, piv * k + j);
            }
            b.swap(col, piv);
        }
        let p = a[col * k + col];
        for row in col + 1..k {
            let f = a[row * k + col] / p;
            if f.value() == 0.0 {
                continue;
            }
            for j in col..k {
                let v = a[col * k + j];
                a[row * k + j] -= f * v;
            }
            let bv = b[col];
            b[row] -= f * bv;
        }
    }
    for col in (0..k).rev() {
        let mut s = b[col];
        for j in col + 1..k {
            s -= a[col * k + j] * b[j];
        }
        b[col] = s / a[col * k + col];
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::RankDeficient(format!("{what} is not positive definite")))
}

/// Solves a symmetric positive definite system.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::RankDeficient(format!("{what} is not positive definite")))
}

/// Ratio of extreme eigenvalues of a symmetric matrix (infinite when singular).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = m.clone().symmetric_eigen().eigenvalues;
    let max = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual1;

    #[test]
    fn solves_small_system() {
        let mut a = vec![2.0, 1.0, 1.0, 3.0];
        let mut b = vec![3.0, 5.0];
        solve_in_place(&mut a, &mut b, 2).unwrap();
        assert!((b[0] - 0.8).abs() < 1e-15 && (b[1] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn pivots_and_detects_singularity() {
        let mut a = vec![0.0, 1.0, 1.0, 0.0];
        let mut b = vec![2.0, 3.0];
        solve_in_place(&mut a, &mut b, 2).unwrap();
        assert_eq!(b, vec![3.0, 2.0]);
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 1.0];
        assert!(matches!(solve_in_place(&mut a, &mut b, 2), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn derivative_of_solution() {
        // x(t) = 1 / (2 + t) solves (2 + t) x = 1; dx/dt = -1/4 at t = 0
        let mut a = vec![Dual1::variable(2.0, 0)];
        let mut b = vec![Dual1::constant(1.0)];
        solve_in_place(&mut a, &mut b, 1).unwrap();
        assert_eq!(b[0].value, 0.5);
        assert!((b[0].grad[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn spd_helpers() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m, "m").unwrap();
        assert!(((&m * &inv) - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert!(spd_inverse(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), "m").is_err());
        assert!((condition_number(&DMatrix::from_diagonal_element(3, 3, 2.0)) - 1.0).abs() < 1e-12);
    }
}
