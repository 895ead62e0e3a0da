//! Small dense linear algebra on row-major `f64` matrices.

use crate::adengine::Tensor;
use crate::{Error, Result};

pub const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]` (row-major `n x n`).
    pub vectors: Vec<f64>,
    pub n: usize,
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls
/// below `JACOBI_TOLERANCE` relative to the matrix norm (absolute for tiny
/// matrices).
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<SymmetricEigen> {
    if a.len() != n * n {
        return Err(Error::ShapeMismatch {
            kind: "symmetric-eigen",
            lhs: vec![a.len()],
            rhs: vec![n, n],
        });
    }
    let mut m = a.to_vec();
    // symmetrize so round-off asymmetry in the input cannot stall rotations
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOLERANCE * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + new] = v[k * n + old];
        }
    }
    Ok(SymmetricEigen { values, vectors, n })
}

/// `A^T A` for a row-major `rows x cols` matrix.
pub fn gram(a: &Tensor) -> Vec<f64> {
    let (r, c) = (a.rows(), a.cols());
    let d = a.data();
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        for j in i..c {
            let s: f64 = (0..r).map(|k| d[k * c + i] * d[k * c + j]).sum();
            g[i * c + j] = s;
            g[j * c + i] = s;
        }
    }
    g
}

/// Singular values in ascending order.
pub fn singular_values(a: &Tensor) -> Result<Vec<f64>> {
    let c = a.cols();
    let eig = symmetric_eigen(&gram(a), c)?;
    Ok(eig.values.into_iter().map(|l| l.max(0.0).sqrt()).collect())
}

pub fn spectral_norm(a: &Tensor) -> Result<f64> {
    Ok(singular_values(a)?.last().copied().unwrap_or(0.0))
}
