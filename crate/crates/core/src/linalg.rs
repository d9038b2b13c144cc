//! Small dense linear algebra: cyclic Jacobi eigendecomposition for symmetric
//! matrices, the symmetric PSD square root built on it, and least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// `matrix = vectors * diag(values) * vectors^T`, eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Cyclic Jacobi rotations in row-major `(p, q)` order until the off-diagonal
/// Frobenius norm is at most `1e-12 * ||matrix||_F`.
pub fn jacobi_eigen(matrix: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: matrix.ncols() });
    }
    let mut a = matrix.clone();
    // Work on the symmetric part so tiny asymmetries cannot stall convergence.
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = 1e-12 * a.norm();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(p, k)] = a[(k, p)];
                        a[(k, q)] = s * akp + c * akq;
                        a[(q, k)] = a[(k, q)];
                    }
                }
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > tol {
        return Err(Error::Numeric(format!("Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors })
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

#[derive(Debug, Clone)]
pub struct PsdSqrt {
    pub root: DMatrix<f64>,
    /// Most negative eigenvalue that was clamped to zero, or 0.
    pub clamped: f64,
}

/// Symmetric square root `U Σ^{1/2} U^T`; negative eigenvalues are set to 0.
pub fn sqrt_psd(matrix: &DMatrix<f64>) -> Result<PsdSqrt> {
    let eig = jacobi_eigen(matrix)?;
    let n = matrix.nrows();
    let clamped = eig.values.iter().copied().fold(0.0f64, f64::min);
    let roots: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut root = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s: f64 = roots.iter().enumerate().map(|(k, r)| eig.vectors[(i, k)] * r * eig.vectors[(j, k)]).sum();
            root[(i, j)] = s;
            root[(j, i)] = s;
        }
    }
    Ok(PsdSqrt { root, clamped })
}

/// Ordinary least squares via Householder QR. Rank deficiency (relative
/// diagonal of R below 1e-10) is an error, never silently regularized.
pub fn least_squares(design: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = design.shape();
    if rows < cols {
        return Err(Error::InsufficientData { needed: cols, got: rows });
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let max_diag = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let col_scale = (0..cols).map(|j| design.column(j).norm()).fold(0.0, f64::max);
    if max_diag == 0.0 || (0..cols).any(|i| r[(i, i)].abs() <= 1e-10 * col_scale.max(max_diag)) {
        return Err(Error::SingularDesign);
    }
    let mut qty = targets.clone();
    qr.q_tr_mul(&mut qty);
    let top = qty.rows(0, cols).into_owned();
    r.solve_upper_triangular(&top).ok_or(Error::SingularDesign)
}
