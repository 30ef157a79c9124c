//! Dense helpers shared by the projection, H-score and feature code.
//!
//! All covariance inversions go through [`sym_pow`], which uses the
//! symmetric eigendecomposition and a relative eigenvalue cutoff of
//! [`PINV_RCOND`] times the largest eigenvalue.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative cutoff below which an eigenvalue is treated as zero.
pub const PINV_RCOND: f64 = 1e-10;

/// How to treat a singular covariance when an inverse is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InversePolicy {
    /// Singular input is an error.
    #[default]
    Strict,
    /// Fall back to the Moore–Penrose inverse and report it.
    PseudoInverse,
}

/// Result of a symmetric matrix function, with a flag recording whether
/// any eigenvalue fell under the cutoff.
#[derive(Debug, Clone)]
pub struct SymPow {
    pub matrix: DMatrix<f64>,
    pub used_pseudo_inverse: bool,
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `A^power` for symmetric PSD `A` via the eigendecomposition.
///
/// Negative powers invert only eigenvalues above `PINV_RCOND * λ_max`; the
/// rest are mapped to zero when `policy` permits it.
pub fn sym_pow(a: &DMatrix<f64>, power: f64, policy: InversePolicy) -> Result<SymPow> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(SymPow {
            matrix: DMatrix::zeros(0, 0),
            used_pseudo_inverse: false,
        });
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let lmin = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let cutoff = PINV_RCOND * lmax;
    let mut singular = false;
    let mapped: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if power < 0.0 {
                if l > cutoff && l > 0.0 {
                    l.powf(power)
                } else {
                    singular = true;
                    0.0
                }
            } else if l > 0.0 {
                l.powf(power)
            } else {
                0.0
            }
        })
        .collect();
    if singular && policy == InversePolicy::Strict {
        return Err(Error::SingularCovariance {
            min_eig: lmin,
            max_eig: lmax,
        });
    }
    let q = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&DVector::from_vec(mapped));
    Ok(SymPow {
        matrix: symmetrize(&(q * d * q.transpose())),
        used_pseudo_inverse: singular,
    })
}

pub fn sym_inv(a: &DMatrix<f64>, policy: InversePolicy) -> Result<SymPow> {
    sym_pow(a, -1.0, policy)
}

pub fn sym_inv_sqrt(a: &DMatrix<f64>, policy: InversePolicy) -> Result<SymPow> {
    sym_pow(a, -0.5, policy)
}

pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    // Square roots never need an inverse, so this cannot fail.
    sym_pow(a, 0.5, InversePolicy::PseudoInverse)
        .map(|r| r.matrix)
        .unwrap_or_else(|_| DMatrix::zeros(a.nrows(), a.ncols()))
}

/// Squared Frobenius norm.
pub fn frob2(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Largest absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Spectral norm via the largest eigenvalue of `AᵀA`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let g = a.transpose() * a;
    let eig = SymmetricEigen::new(symmetrize(&g));
    eig.eigenvalues
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
        .sqrt()
}

/// Orthonormal basis of the column space (columns with negligible residual
/// after Gram–Schmidt are dropped).
pub fn orthonormal_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let scale = a
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..a.ncols() {
        let mut v = a.column(j).into_owned();
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&v);
                v -= c * proj;
            }
        }
        let n = v.norm();
        if n > 1e-12 * scale {
            cols.push(v / n);
        }
    }
    if cols.is_empty() {
        return DMatrix::zeros(a.nrows(), 0);
    }
    DMatrix::from_columns(&cols)
}

/// Largest principal angle (radians) between the column spaces of `a` and
/// `b`. Both are orthonormalized first; the angle is computed from the
/// sine form `‖(I − QaQaᵀ) Qb‖₂`, which stays accurate for tiny angles.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormal_columns(a);
    let qb = orthonormal_columns(b);
    if qa.ncols() != qb.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if qa.ncols() == 0 {
        return 0.0;
    }
    let resid = &qb - &qa * (qa.transpose() * &qb);
    spectral_norm(&resid).min(1.0).asin()
}

/// Extend the orthonormal columns of `basis` (m × r) with `count` further
/// orthonormal columns, drawn from the standard basis by Gram–Schmidt.
pub fn complete_basis(basis: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let m = basis.nrows();
    let mut cols: Vec<DVector<f64>> = (0..basis.ncols())
        .map(|j| basis.column(j).into_owned())
        .collect();
    let start = cols.len();
    while cols.len() < start + count {
        // pick the standard basis vector with the largest residual
        let mut best: Option<(f64, DVector<f64>)> = None;
        for i in 0..m {
            let mut v = DVector::zeros(m);
            v[i] = 1.0;
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&v);
                    v -= c * proj;
                }
            }
            let n = v.norm();
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, v));
            }
        }
        match best {
            Some((n, v)) if n > 1e-8 => cols.push(v / n),
            _ => break,
        }
    }
    if cols.len() == start {
        return DMatrix::zeros(m, 0);
    }
    DMatrix::from_columns(&cols[start..])
}

/// Orthonormal basis (n × (n−1)) of the complement of the unit vector `u`.
pub fn complement_basis(u: &DVector<f64>) -> DMatrix<f64> {
    let un = u / u.norm();
    let b = DMatrix::from_column_slice(un.len(), 1, un.as_slice());
    complete_basis(&b, un.len() - 1)
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-fixed).
pub fn haar_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Rows of a matrix as nested vectors (row-major JSON layout).
pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| a.row(i).iter().cloned().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Serde adapter storing a matrix as nested row arrays.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter storing a vector as a flat array.
pub mod serde_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
