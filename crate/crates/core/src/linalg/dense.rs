//! Small dense helpers built on faer: eigen-decompositions, singular values, solves.

use faer::{Mat, Side};

use super::C64;
use crate::error::{Error, Result};

/// Row-major dense real matrix.
pub type DenseReal = Vec<Vec<f64>>;
/// Row-major dense complex matrix.
pub type DenseComplex = Vec<Vec<C64>>;

fn to_mat_real(a: &[Vec<f64>]) -> Mat<f64> {
    let (m, n) = (a.len(), a.first().map_or(0, |r| r.len()));
    Mat::from_fn(m, n, |i, j| a[i][j])
}

fn to_mat_complex(a: &[Vec<C64>]) -> Mat<C64> {
    let (m, n) = (a.len(), a.first().map_or(0, |r| r.len()));
    Mat::from_fn(m, n, |i, j| a[i][j])
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (as columns) of a symmetric matrix.
pub fn symmetric_eigen(a: &[Vec<f64>]) -> Result<(Vec<f64>, DenseReal)> {
    let m = to_mat_real(a);
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Spectral(format!("symmetric eigensolver failed: {e:?}")))?;
    let n = a.len();
    let s = evd.S();
    let u = evd.U();
    let vals = (0..n).map(|i| s[i]).collect();
    let vecs = (0..n).map(|i| (0..n).map(|j| u[(i, j)]).collect()).collect();
    Ok((vals, vecs))
}

/// Eigenvalues and right eigenvectors (as columns) of a general complex matrix.
pub fn complex_eigen(a: &[Vec<C64>]) -> Result<(Vec<C64>, DenseComplex)> {
    let n = a.len();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let m = to_mat_complex(a);
    let evd = m
        .eigen()
        .map_err(|e| Error::Spectral(format!("dense eigensolver failed: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let vals = (0..n).map(|i| s[i]).collect();
    let vecs = (0..n).map(|i| (0..n).map(|j| u[(i, j)]).collect()).collect();
    Ok((vals, vecs))
}

/// Eigenvalues and right eigenvectors of a general real matrix.
pub fn real_eigen(a: &[Vec<f64>]) -> Result<(Vec<C64>, DenseComplex)> {
    let c: DenseComplex = a
        .iter()
        .map(|r| r.iter().map(|&v| C64::new(v, 0.0)).collect())
        .collect();
    complex_eigen(&c)
}

/// Singular values of a complex matrix, in nonincreasing order.
pub fn complex_singular_values(a: &[Vec<C64>]) -> Result<Vec<f64>> {
    let m = to_mat_complex(a);
    let mut s = m
        .singular_values()
        .map_err(|e| Error::Spectral(format!("singular value decomposition failed: {e:?}")))?;
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(s)
}

/// Singular values of a real matrix, in nonincreasing order.
pub fn real_singular_values(a: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = to_mat_real(a);
    let mut s = m
        .singular_values()
        .map_err(|e| Error::Spectral(format!("singular value decomposition failed: {e:?}")))?;
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(s)
}

/// Orthonormal basis of the null space of a real matrix, from its SVD.
///
/// Singular values below `rel_tol · σ_max` count as zero.
pub fn real_null_space(a: &[Vec<f64>], rel_tol: f64) -> Result<DenseReal> {
    let (m, n) = (a.len(), a.first().map_or(0, |r| r.len()));
    let mat = to_mat_real(a);
    let svd = mat
        .svd()
        .map_err(|e| Error::Spectral(format!("singular value decomposition failed: {e:?}")))?;
    let s = svd.S();
    let v = svd.V();
    let k = m.min(n);
    let smax = (0..k).map(|i| s[i]).fold(0.0f64, f64::max);
    let rank = (0..k).filter(|&i| s[i] > rel_tol * smax).count();
    Ok((rank..n).map(|j| (0..n).map(|i| v[(i, j)]).collect()).collect())
}

/// Solves a dense complex system `A x = b`.
pub fn complex_solve(a: &[Vec<C64>], b: &[C64]) -> Result<Vec<C64>> {
    use super::{DenseLu, LinearSolve};
    let lu = DenseLu::new(a)?;
    let mut x = b.to_vec();
    lu.solve_in_place(&mut x);
    Ok(x)
}

/// Solves a dense real system `A x = b`.
pub fn real_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    use super::{DenseLu, LinearSolve};
    let lu = DenseLu::new(a)?;
    let mut x = b.to_vec();
    lu.solve_in_place(&mut x);
    Ok(x)
}

/// Complex matrix product of row-major dense matrices.
pub fn complex_matmul(a: &[Vec<C64>], b: &[Vec<C64>]) -> DenseComplex {
    let n = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().zip(b).map(|(&x, br)| x * br[j]).sum())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_eigen_of_diagonal() {
        let (vals, _) = symmetric_eigen(&[vec![9.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 4.0]]).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[2] - 9.0).abs() < 1e-14);
    }

    #[test]
    fn rotation_generator_has_imaginary_pair() {
        let (vals, vecs) = real_eigen(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        for (k, v) in vals.iter().enumerate() {
            assert!((v.norm() - 1.0).abs() < 1e-13 && v.re.abs() < 1e-13);
            let x = [vecs[0][k], vecs[1][k]];
            let ax = [x[1], -x[0]];
            assert!((ax[0] - v * x[0]).norm() < 1e-12 && (ax[1] - v * x[1]).norm() < 1e-12);
        }
    }

    #[test]
    fn null_space_of_rank_one() {
        let ns = real_null_space(&[vec![1.0, 1.0, 0.0]], 1e-12).unwrap();
        assert_eq!(ns.len(), 2);
        for v in ns {
            assert!((v[0] + v[1]).abs() < 1e-13);
        }
    }
}
