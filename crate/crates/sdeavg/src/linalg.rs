//! Small dense linear-algebra helpers: symmetric eigendecompositions with a
//! deterministic ordering, PSD matrix square roots, operator norms.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that a matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Relative tolerance below which a negative eigenvalue is clamped to zero
/// instead of being reported as a PSD violation.
pub const PSD_TOL: f64 = 1e-10;

/// Largest entry magnitude, the scale used for relative comparisons.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()))
}

/// Errors unless `m` is square and symmetric to `tol` relative to its
/// largest entry.
pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "symmetric matrix",
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let scale = max_abs(m).max(1e-300);
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if worst > tol * scale {
        return Err(Error::NotSymmetric {
            asymmetry: worst / scale,
            tolerance: tol,
        });
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and a fixed sign convention on the eigenvectors (largest
/// component positive), so repeated calls on identical input are bit-stable
/// and independent of backend ordering.
pub fn symmetric_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &idx) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[idx];
        let mut col = eig.eigenvectors.column(idx).clone_owned();
        // sign convention: make the entry of largest magnitude positive
        let mut lead = 0;
        for i in 1..n {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(k, &col);
    }
    (values, vectors)
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues in `[-tol * max_eig, 0)` are clamped to zero; anything below
/// that is a PSD violation and errors out.
pub fn sqrt_psd(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    check_symmetric(m, SYMMETRY_TOL)?;
    let (values, vectors) = symmetric_eigen_sorted(m);
    let scale = values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let mut roots = DVector::zeros(values.len());
    for (i, &lambda) in values.iter().enumerate() {
        if lambda < -tol * scale {
            return Err(Error::NotPositiveSemidefinite {
                eigenvalue: lambda,
                tolerance: tol * scale,
            });
        }
        roots[i] = lambda.max(0.0).sqrt();
    }
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| vectors[(i, j)] * roots[j]);
    Ok(&scaled * vectors.transpose())
}

/// Operator (spectral) norm: the largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Frobenius norm of the difference, as a cheap matrix distance for tests.
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_symmetric(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn sqrt_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = sqrt_psd(&m, PSD_TOL).unwrap();
        assert_relative_eq!(r[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(r[(1, 1)], 3.0, epsilon = 1e-12);
        assert_relative_eq!(r[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_identity_is_identity() {
        let m = DMatrix::<f64>::identity(3, 3);
        let r = sqrt_psd(&m, PSD_TOL).unwrap();
        assert!((r - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = crate::rng::rng_from_seed(11);
        for _ in 0..20 {
            let a = random_symmetric(5, &mut rng);
            let psd = &a * a.transpose();
            let r = sqrt_psd(&psd, PSD_TOL).unwrap();
            let back = &r * &r;
            let rel = frobenius_distance(&back, &psd) / psd.norm().max(1e-12);
            assert!(rel < 1e-9, "square root reconstruction error {rel}");
        }
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(
            sqrt_psd(&m, PSD_TOL),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn symmetry_check_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(
            check_symmetric(&m, SYMMETRY_TOL),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn eigen_order_is_descending_and_orthonormal() {
        let mut rng = crate::rng::rng_from_seed(3);
        let m = random_symmetric(6, &mut rng);
        let (vals, vecs) = symmetric_eigen_sorted(&m);
        for k in 1..vals.len() {
            assert!(vals[k - 1] >= vals[k]);
        }
        let gram = vecs.transpose() * &vecs;
        assert!((gram - DMatrix::<f64>::identity(6, 6)).norm() < 1e-10);
        // reconstruction
        let lambda = DMatrix::from_diagonal(&vals);
        assert!(frobenius_distance(&(&vecs * lambda * vecs.transpose()), &m) < 1e-10);
    }
}
