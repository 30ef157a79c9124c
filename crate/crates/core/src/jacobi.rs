//! One-sided (Hestenes) Jacobi SVD for small dense matrices.
//!
//! Columns of a working copy are orthogonalized pairwise by plane rotations
//! until every pair is orthogonal to relative precision [`JACOBI_TOL`]. The
//! column norms are then the singular values and the accumulated rotations
//! the right singular vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const JACOBI_TOL: f64 = 1e-15;
pub const JACOBI_MAX_SWEEPS: usize = 60;

/// Thin SVD `A = U diag(s) Vᵀ` with `A` m×n, m ≥ n, U m×n, V n×n.
/// Singular values are sorted non-increasing. Columns of U belonging to
/// zero singular values are left as zero vectors; callers complete them.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
    pub sweeps: usize,
}

pub fn one_sided_jacobi(a: &DMatrix<f64>) -> Result<ThinSvd> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::DimensionMismatch(format!(
            "one-sided Jacobi expects rows >= cols, got {m}x{n}"
        )));
    }
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut sweeps = 0;
    let mut off = f64::INFINITY;
    // below m·ε_mach the inner products are rounding noise
    let tol = JACOBI_TOL.max(m as f64 * f64::EPSILON);
    // columns below this are rounding noise; rotating them can underflow
    let negligible = f64::EPSILON * a.norm();
    while sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        off = 0.0_f64;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                let scale = alpha.sqrt() * beta.sqrt();
                if gamma == 0.0
                    || alpha.sqrt() <= negligible
                    || beta.sqrt() <= negligible
                    || scale == 0.0
                {
                    continue;
                }
                let rel = gamma.abs() / scale;
                off = off.max(rel);
                if rel <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    if off > tol && sweeps >= JACOBI_MAX_SWEEPS {
        return Err(Error::NoConvergence {
            what: "one-sided Jacobi SVD",
            iterations: sweeps,
            residual: off,
        });
    }

    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let zero_cut = (smax * 1e-14).max(f64::MIN_POSITIVE);

    let mut u = DMatrix::zeros(m, n);
    let mut vs = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        vs.set_column(k, &v.column(j));
        if norms[j] > zero_cut {
            u.set_column(k, &(w.column(j) / norms[j]));
        }
    }
    Ok(ThinSvd {
        u,
        s,
        v: vs,
        sweeps,
    })
}
