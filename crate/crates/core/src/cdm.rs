//! Canonical dependence matrix, its singular system, maximal-correlation
//! features and the alternating-conditional-expectation iteration.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobi;
use crate::linalg::{self, serde_rows, InversePolicy};
use crate::prob::{FiniteDist, InfoVector, JointDist};

/// Singular values below this are treated as exact zeros.
pub const ZERO_SIGMA: f64 = 1e-12;
/// Adjacent singular values closer than this are flagged as a degenerate gap.
pub const TOL_GAP: f64 = 1e-8;

/// B̃(y,x) = (P_XY(x,y) − P_X(x)P_Y(y)) / √(P_X(x)P_Y(y)), stored |Y|×|X|.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdm {
    mat: DMatrix<f64>,
    px: FiniteDist,
    py: FiniteDist,
}

impl Cdm {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn px(&self) -> &FiniteDist {
        &self.px
    }

    pub fn py(&self) -> &FiniteDist {
        &self.py
    }

    pub fn nx(&self) -> usize {
        self.mat.ncols()
    }

    pub fn ny(&self) -> usize {
        self.mat.nrows()
    }

    /// K = min(|X|, |Y|).
    pub fn rank_bound(&self) -> usize {
        self.nx().min(self.ny())
    }

    pub fn frob2(&self) -> f64 {
        linalg::frob2(&self.mat)
    }

    /// The joint table P_X P_Y + √(P_X P_Y) ⊙ B̃, |Y|×|X|.
    pub fn joint_table(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.ny(), self.nx(), |y, x| {
            let q = self.px.get(x) * self.py.get(y);
            q + q.sqrt() * self.mat[(y, x)]
        })
    }

    /// (‖B̃ᵀ√P_Y‖, ‖B̃√P_X‖); both vanish for a valid matrix.
    pub fn null_residuals(&self) -> (f64, f64) {
        (
            (self.mat.transpose() * self.py.sqrt_vector()).norm(),
            (&self.mat * self.px.sqrt_vector()).norm(),
        )
    }
}

pub fn build_cdm(j: &JointDist) -> Result<Cdm> {
    j.px().require_strictly_positive()?;
    j.py().require_strictly_positive()?;
    let (px, py) = (j.px(), j.py());
    let mat = DMatrix::from_fn(j.ny(), j.nx(), |y, x| {
        let q = px.get(x) * py.get(y);
        (j.p(x, y) - q) / q.sqrt()
    });
    Ok(Cdm {
        mat,
        px: px.clone(),
        py: py.clone(),
    })
}

/// Full singular system of a [`Cdm`], K = min(|X|,|Y|) triplets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CdmSvd {
    pub sigmas: Vec<f64>,
    #[serde(with = "serde_rows")]
    pub psi_x: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub psi_y: DMatrix<f64>,
    pub px: FiniteDist,
    pub py: FiniteDist,
    /// Indices i with |σ_i − σ_{i+1}| < [`TOL_GAP`]; vectors there are only
    /// meaningful as a subspace.
    pub degenerate_gaps: Vec<usize>,
    pub sweeps: usize,
}

impl CdmSvd {
    pub fn k_max(&self) -> usize {
        self.sigmas.len()
    }

    pub fn top_psi_x(&self, k: usize) -> DMatrix<f64> {
        self.psi_x.columns(0, k).into_owned()
    }

    pub fn top_psi_y(&self, k: usize) -> DMatrix<f64> {
        self.psi_y.columns(0, k).into_owned()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(&self.sigmas));
        &self.psi_y * s * self.psi_x.transpose()
    }

    /// Σ_{i≤k} σ_i².
    pub fn energy(&self, k: usize) -> f64 {
        self.sigmas.iter().take(k).map(|s| s * s).sum()
    }
}

/// Replace the numerically-null block so that its last column is `sqrt_p`
/// (projected onto the block span), keeping the block orthonormal.
fn rebase_null_block(block: &DMatrix<f64>, sqrt_p: &DVector<f64>) -> DMatrix<f64> {
    let z = block.ncols();
    let coeff = block.transpose() * sqrt_p;
    if coeff.norm() < 1e-8 {
        return block.clone();
    }
    let c = &coeff / coeff.norm();
    let mut out = DMatrix::zeros(block.nrows(), z);
    if z > 1 {
        let comp = linalg::complement_basis(&c);
        out.columns_mut(0, z - 1).copy_from(&(block * comp));
    }
    out.set_column(z - 1, &(block * c));
    out
}

/// Orthonormal columns for the larger alphabet: the given non-null columns,
/// a completion, and `sqrt_p` last.
fn complete_big_side(nonnull: &DMatrix<f64>, sqrt_p: &DVector<f64>, total: usize) -> DMatrix<f64> {
    let m = nonnull.nrows();
    let r = nonnull.ncols();
    let mut out = DMatrix::zeros(m, total);
    out.columns_mut(0, r).copy_from(nonnull);
    if total == r {
        return out;
    }
    let mut base = DMatrix::zeros(m, r + 1);
    base.columns_mut(0, r).copy_from(nonnull);
    let mut u = sqrt_p.clone();
    for j in 0..r {
        let proj = nonnull.column(j).dot(&u);
        u -= nonnull.column(j) * proj;
    }
    let un = u.norm();
    base.set_column(r, &(u / un));
    let fill = linalg::complete_basis(&base, total - r - 1);
    out.columns_mut(r, fill.ncols()).copy_from(&fill);
    out.set_column(total - 1, &base.column(r));
    out
}

pub fn cdm_svd(c: &Cdm) -> Result<CdmSvd> {
    let (ny, nx) = (c.ny(), c.nx());
    let x_is_small = ny >= nx;
    let work = if x_is_small {
        c.mat.clone()
    } else {
        c.mat.transpose()
    };
    let svd = jacobi::one_sided_jacobi(&work)?;
    let kk = svd.s.len();
    let mut sigmas: Vec<f64> = svd.s.iter().cloned().collect();
    let nonnull = sigmas.iter().take_while(|s| **s > ZERO_SIGMA).count();
    for s in sigmas.iter_mut().skip(nonnull) {
        *s = 0.0;
    }
    let (small_sqrt, big_sqrt) = if x_is_small {
        (c.px.sqrt_vector(), c.py.sqrt_vector())
    } else {
        (c.py.sqrt_vector(), c.px.sqrt_vector())
    };
    let mut small = svd.v.clone();
    if nonnull < kk {
        let block = small.columns(nonnull, kk - nonnull).into_owned();
        let rebased = rebase_null_block(&block, &small_sqrt);
        small.columns_mut(nonnull, kk - nonnull).copy_from(&rebased);
    }
    let big = complete_big_side(&svd.u.columns(0, nonnull).into_owned(), &big_sqrt, kk);
    let (mut psi_x, mut psi_y) = if x_is_small {
        (small, big)
    } else {
        (big, small)
    };

    for i in 0..kk {
        let first = psi_x.column(i).iter().cloned().find(|v| v.abs() > 1e-12);
        if first.is_some_and(|v| v < 0.0) {
            psi_x.column_mut(i).neg_mut();
            psi_y.column_mut(i).neg_mut();
        }
    }
    let degenerate_gaps = (0..kk.saturating_sub(1))
        .filter(|&i| (sigmas[i] - sigmas[i + 1]).abs() < TOL_GAP)
        .collect();
    Ok(CdmSvd {
        sigmas,
        psi_x,
        psi_y,
        px: c.px.clone(),
        py: c.py.clone(),
        degenerate_gaps,
        sweeps: svd.sweeps,
    })
}

/// k real functions on an alphabet, with Ξ = diag(√ref)·values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    values: DMatrix<f64>,
    reference: FiniteDist,
    xi: DMatrix<f64>,
}

impl FeatureSet {
    /// `values` is |alphabet|×k.
    pub fn new(values: DMatrix<f64>, reference: FiniteDist) -> Result<Self> {
        if values.nrows() != reference.len() {
            return Err(Error::DimensionMismatch(format!(
                "feature values have {} rows, alphabet has {}",
                values.nrows(),
                reference.len()
            )));
        }
        let sq = reference.sqrt_vector();
        let xi = DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| {
            sq[i] * values[(i, j)]
        });
        Ok(Self {
            values,
            reference,
            xi,
        })
    }

    /// Inverse of Ξ = diag(√ref)·values; needs a strictly positive reference.
    pub fn from_xi(xi: DMatrix<f64>, reference: FiniteDist) -> Result<Self> {
        reference.require_strictly_positive()?;
        if xi.nrows() != reference.len() {
            return Err(Error::DimensionMismatch(format!(
                "Ξ has {} rows, alphabet has {}",
                xi.nrows(),
                reference.len()
            )));
        }
        let sq = reference.sqrt_vector();
        let values = DMatrix::from_fn(xi.nrows(), xi.ncols(), |i, j| xi[(i, j)] / sq[i]);
        Ok(Self {
            values,
            reference,
            xi,
        })
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn reference(&self) -> &FiniteDist {
        &self.reference
    }

    pub fn means(&self) -> DVector<f64> {
        self.values.transpose() * self.reference.to_vector()
    }

    /// E[f fᵀ] under the reference, which is ΞᵀΞ.
    pub fn second_moment(&self) -> DMatrix<f64> {
        self.xi.transpose() * &self.xi
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.means();
        self.second_moment() - &mu * mu.transpose()
    }

    /// Zero mean, identity covariance within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        let mean_ok = self.means().amax() <= tol;
        let cov = self.second_moment() - DMatrix::identity(self.k(), self.k());
        mean_ok && linalg::max_abs(&cov) <= tol
    }

    pub fn centered(&self) -> Self {
        let mu = self.means();
        let values = DMatrix::from_fn(self.values.nrows(), self.k(), |i, j| {
            self.values[(i, j)] - mu[j]
        });
        Self::new(values, self.reference.clone()).expect("shape unchanged")
    }

    /// Center and multiply by Λ^{-1/2} so the result is normalized.
    pub fn whitened(&self, policy: InversePolicy) -> Result<Self> {
        let c = self.centered();
        let w = linalg::sym_inv_sqrt(&c.second_moment(), policy)?;
        Self::new(c.values * w.matrix, self.reference.clone())
    }

    /// Feature `j` as a plain vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().cloned().collect()
    }
}

/// Top-k maximal-correlation features f_i = ψ^X_i/√P_X and g_i = ψ^Y_i/√P_Y.
pub fn maxcorr_features(s: &CdmSvd, k: usize) -> Result<(FeatureSet, FeatureSet)> {
    let max = s.k_max().saturating_sub(1);
    if k == 0 || k > max {
        return Err(Error::InvalidK { k, max });
    }
    let f = FeatureSet::from_xi(s.top_psi_x(k), s.px.clone())?;
    let g = FeatureSet::from_xi(s.top_psi_y(k), s.py.clone())?;
    Ok((f, g))
}

/// E_{P_XY}[f_i(X) g_j(Y)] as a k×k matrix.
pub fn cross_moment(j: &JointDist, f: &FeatureSet, g: &FeatureSet) -> DMatrix<f64> {
    g.values().transpose() * j.table() * f.values()
}

#[derive(Debug, Clone)]
pub struct AceResult {
    pub f: FeatureSet,
    pub g: FeatureSet,
    pub sigmas: Vec<f64>,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
}

/// Seed of the internal starting vectors, fixed so runs are reproducible.
const ACE_SEED: u64 = 0xACE;

/// Orthonormal columns spanning `m` inside the span of `basis`, computed in
/// basis coordinates so the result stays orthogonal to whatever `basis`
/// excludes (here the constant function).
fn orthonormal_in(basis: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let coords = basis.transpose() * m;
    basis * coords.qr().q()
}

/// Alternating conditional expectations on a block of k functions.
///
/// Each step maps f ↦ g = E[f(X)|Y] and g ↦ f = E[g(Y)|X] on all k columns
/// at once, re-orthonormalizes in the P-weighted inner product (within the
/// complement of the constant function), then resolves the block by a k×k
/// SVD of Ψ^YᵀB̃Ψ^X. Convergence needs only σ_k > σ_{k+1}; ties inside the
/// block are harmless. Stops when every column has
/// max(‖B̃ψ^X − σψ^Y‖, ‖B̃ᵀψ^Y − σψ^X‖) ≤ `tol`.
pub fn ace(j: &JointDist, k: usize, tol: f64, max_iter: usize) -> Result<AceResult> {
    let c = build_cdm(j)?;
    let kmax = c.rank_bound().saturating_sub(1);
    if k == 0 || k > kmax {
        return Err(Error::InvalidK { k, max: kmax });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let x_given_y = j.x_given_y()?;
    let y_given_x = j.y_given_x()?;
    let sqx = c.px.sqrt_vector();
    let sqy = c.py.sqrt_vector();
    let basis_x = linalg::complement_basis(&sqx);
    let basis_y = linalg::complement_basis(&sqy);
    let b = &c.mat;

    let mut rng = ChaCha8Rng::seed_from_u64(ACE_SEED);
    let start = DMatrix::from_fn(c.nx(), k, |_, _| StandardNormal.sample(&mut rng));
    let mut block_x = orthonormal_in(&basis_x, &start);
    let mut psi_x = block_x.clone();
    let mut psi_y = DMatrix::zeros(c.ny(), k);
    let mut sigmas = vec![0.0; k];
    let mut residuals = vec![f64::INFINITY; k];
    let mut it = 0;
    while it < max_iter {
        it += 1;
        // g(y) = E[f(X)|Y=y], carried as √P_Y·g
        let f = DMatrix::from_fn(c.nx(), k, |x, i| block_x[(x, i)] / sqx[x]);
        let g = &x_given_y * f;
        let block_y = orthonormal_in(
            &basis_y,
            &DMatrix::from_fn(c.ny(), k, |y, i| g[(y, i)] * sqy[y]),
        );
        // f(x) = E[g(Y)|X=x]
        let g = DMatrix::from_fn(c.ny(), k, |y, i| block_y[(y, i)] / sqy[y]);
        let f = y_given_x.transpose() * g;
        block_x = orthonormal_in(
            &basis_x,
            &DMatrix::from_fn(c.nx(), k, |x, i| f[(x, i)] * sqx[x]),
        );

        // Rayleigh-Ritz: B̃ restricted to the two blocks
        let small = block_y.transpose() * b * &block_x;
        let svd = jacobi::one_sided_jacobi(&small)?;
        let nonzero = svd.s.iter().filter(|s| **s > ZERO_SIGMA).count();
        let mut u = svd.u.clone();
        if nonzero < k {
            let fill = linalg::complete_basis(&svd.u.columns(0, nonzero).into_owned(), k - nonzero);
            u.columns_mut(nonzero, k - nonzero)
                .copy_from(&fill.columns(nonzero, k - nonzero));
        }
        psi_x = &block_x * &svd.v;
        psi_y = &block_y * u;
        for i in 0..k {
            sigmas[i] = svd.s[i];
            let r1 = (b * psi_x.column(i) - psi_y.column(i) * sigmas[i]).norm();
            let r2 = (b.transpose() * psi_y.column(i) - psi_x.column(i) * sigmas[i]).norm();
            residuals[i] = r1.max(r2);
        }
        if residuals.iter().all(|r| *r <= tol) {
            break;
        }
    }
    let worst = residuals.iter().cloned().fold(0.0, f64::max);
    if worst > tol {
        return Err(Error::NoConvergence {
            what: "ACE",
            iterations: it,
            residual: worst,
        });
    }
    for i in 0..k {
        if psi_x
            .column(i)
            .iter()
            .find(|v| v.abs() > 1e-12)
            .is_some_and(|v| *v < 0.0)
        {
            psi_x.column_mut(i).neg_mut();
            psi_y.column_mut(i).neg_mut();
        }
    }
    Ok(AceResult {
        f: FeatureSet::from_xi(psi_x, c.px.clone())?,
        g: FeatureSet::from_xi(psi_y, c.py.clone())?,
        sigmas,
        iterations: vec![it; k],
        residuals,
    })
}

/// φ^X = B̃ᵀφ^Y for a Markov chain X – Y – V.
pub fn markov_transport(c: &Cdm, phi_y: &InfoVector) -> Result<InfoVector> {
    if phi_y.phi().len() != c.ny() {
        return Err(Error::DimensionMismatch(format!(
            "information vector has {} entries, |Y| = {}",
            phi_y.phi().len(),
            c.ny()
        )));
    }
    let inner = c.py.sqrt_vector().dot(phi_y.phi());
    if inner.abs() > 1e-8 {
        return Err(Error::InvalidInfoVector { inner });
    }
    InfoVector::from_phi(c.mat.transpose() * phi_y.phi(), c.px.clone())
}
