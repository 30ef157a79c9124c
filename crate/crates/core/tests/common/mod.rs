//! Shared oracles for integration tests. Everything here is computed
//! directly from the joint table with nalgebra, independent of the library
//! code under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use ufslab::prob::JointDist;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Strictly positive joint with Dirichlet(α) cell weights.
pub fn random_joint(nx: usize, ny: usize, alpha: f64, rng: &mut ChaCha8Rng) -> JointDist {
    let g = Gamma::new(alpha, 1.0).unwrap();
    let w: Vec<f64> = (0..nx * ny).map(|_| g.sample(rng).max(1e-12)).collect();
    let total: f64 = w.iter().sum();
    let t = DMatrix::from_fn(ny, nx, |y, x| w[x * ny + y] / total);
    JointDist::new(t).unwrap()
}

pub fn marginals(t: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let px = DVector::from_fn(t.ncols(), |x, _| t.column(x).sum());
    let py = DVector::from_fn(t.nrows(), |y, _| t.row(y).sum());
    (px, py)
}

/// B̃(y,x) = (P(x,y) − P(x)P(y)) / √(P(x)P(y)) straight from the table.
pub fn cdm_oracle(t: &DMatrix<f64>) -> DMatrix<f64> {
    let (px, py) = marginals(t);
    DMatrix::from_fn(t.nrows(), t.ncols(), |y, x| {
        (t[(y, x)] - px[x] * py[y]) / (px[x] * py[y]).sqrt()
    })
}

/// Singular values and vectors sorted descending. Built from the symmetric
/// eigendecompositions of B̃ᵀB̃ and B̃B̃ᵀ: nalgebra 0.35's bidiagonal SVD
/// returns wrong factors for some rank-deficient inputs.
pub struct OracleSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let e = m.symmetric_eigen();
    let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| e.eigenvalues[j].total_cmp(&e.eigenvalues[i]));
    let vals = idx.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(
        &idx.iter()
            .map(|&i| e.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

pub fn svd_oracle(b: &DMatrix<f64>) -> OracleSvd {
    let kk = b.nrows().min(b.ncols());
    let (lx, v) = sorted_eigen(b.transpose() * b);
    let (_, uy) = sorted_eigen(b * b.transpose());
    let s: Vec<f64> = lx.iter().take(kk).map(|l| l.max(0.0).sqrt()).collect();
    let smax = s[0].max(f64::MIN_POSITIVE);
    // left vectors from B̃v/σ where σ is well away from zero, so signs pair up
    let mut u = DMatrix::zeros(b.nrows(), kk);
    for i in 0..kk {
        if s[i] > 1e-8 * smax {
            u.set_column(i, &(b * v.column(i) / s[i]));
        } else {
            u.set_column(i, &uy.column(i));
        }
    }
    OracleSvd {
        u,
        s,
        v: v.columns(0, kk).into_owned(),
    }
}

/// Rank-k truncation U_kΣ_kV_kᵀ.
pub fn truncated(o: &OracleSvd, k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(o.u.nrows(), o.v.nrows());
    for i in 0..k {
        m += o.u.column(i) * o.v.column(i).transpose() * o.s[i];
    }
    m
}

/// Sine of the largest principal angle between two column spans, via
/// ‖(I − QaQaᵀ)Qb‖₂ with QR-orthonormalized bases.
pub fn subspace_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let r = &qb - &qa * (qa.transpose() * &qb);
    r.singular_values().max()
}
