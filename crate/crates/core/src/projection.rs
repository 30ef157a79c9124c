//! Closed-form local solutions for a softmax output layer and a single
//! hidden layer: the quadratic loss surrogate, forward and backward feature
//! projections, the rank-k optimum, alternating projection, the Pythagorean
//! identity and the hidden-layer weight/bias optimum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cdm::{cdm_svd, Cdm, FeatureSet};
use crate::error::{Error, Result};
use crate::linalg::{self, serde_rows, serde_vec, InversePolicy};
use crate::prob::FiniteDist;

/// Output-layer parameters: logits v(y)ᵀs + b(y). `v` is |Y|×k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    #[serde(with = "serde_rows")]
    pub v: DMatrix<f64>,
    #[serde(with = "serde_vec")]
    pub b: DVector<f64>,
}

/// Subtract the P-weighted mean of each column.
pub fn center_columns(m: &DMatrix<f64>, p: &FiniteDist) -> DMatrix<f64> {
    let mean = m.transpose() * p.to_vector();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[j])
}

fn diag_sqrt_times(p: &FiniteDist, m: &DMatrix<f64>) -> DMatrix<f64> {
    let sq = p.sqrt_vector();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| sq[i] * m[(i, j)])
}

fn diag_inv_sqrt_times(p: &FiniteDist, m: &DMatrix<f64>) -> DMatrix<f64> {
    let sq = p.sqrt_vector();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / sq[i])
}

impl SoftmaxParams {
    pub fn new(v: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if v.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "v has {} rows, b has {} entries",
                v.nrows(),
                b.len()
            )));
        }
        Ok(Self { v, b })
    }

    /// Parameters with the given centered weights and centered bias offset,
    /// b = d̃ + log P_Y.
    pub fn from_centered(v_tilde: DMatrix<f64>, d_tilde: &DVector<f64>, py: &FiniteDist) -> Self {
        let b = DVector::from_fn(py.len(), |y, _| d_tilde[y] + py.get(y).ln());
        Self { v: v_tilde, b }
    }

    pub fn k(&self) -> usize {
        self.v.ncols()
    }

    pub fn ny(&self) -> usize {
        self.v.nrows()
    }

    /// d(y) = b(y) − log P_Y(y).
    pub fn d(&self, py: &FiniteDist) -> DVector<f64> {
        DVector::from_fn(self.ny(), |y, _| self.b[y] - py.get(y).ln())
    }

    pub fn v_tilde(&self, py: &FiniteDist) -> DMatrix<f64> {
        center_columns(&self.v, py)
    }

    pub fn d_tilde(&self, py: &FiniteDist) -> DVector<f64> {
        let d = self.d(py);
        let mean = py.expect(d.as_slice());
        d.add_scalar(-mean)
    }

    /// Ξ^Y = diag(√P_Y)·ṽ.
    pub fn xi_y(&self, py: &FiniteDist) -> DMatrix<f64> {
        diag_sqrt_times(py, &self.v_tilde(py))
    }

    fn check(&self, c: &Cdm) -> Result<()> {
        if self.ny() != c.ny() {
            return Err(Error::DimensionMismatch(format!(
                "softmax has {} classes, |Y| = {}",
                self.ny(),
                c.ny()
            )));
        }
        Ok(())
    }
}

/// Smooth bounded activation of the hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn value(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                if a >= 0.0 {
                    1.0 / (1.0 + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => a.tanh(),
        }
    }

    pub fn derivative(self, a: f64) -> f64 {
        let s = self.value(a);
        match self {
            Activation::Sigmoid => s * (1.0 - s),
            Activation::Tanh => 1.0 - s * s,
        }
    }

    /// σ⁻¹(μ); ±∞ at the ends of the range.
    pub fn inverse(self, mu: f64) -> f64 {
        match self {
            Activation::Sigmoid => (mu / (1.0 - mu)).ln(),
            Activation::Tanh => mu.atanh(),
        }
    }

    /// σ′(σ⁻¹(μ)), written in terms of μ so it is exact at the range ends.
    pub fn derivative_at_value(self, mu: f64) -> f64 {
        match self {
            Activation::Sigmoid => mu * (1.0 - mu),
            Activation::Tanh => 1.0 - mu * mu,
        }
    }

    /// (σ_min, σ_max).
    pub fn range(self) -> (f64, f64) {
        match self {
            Activation::Sigmoid => (0.0, 1.0),
            Activation::Tanh => (-1.0, 1.0),
        }
    }
}

/// Hidden layer s_z = σ(w(z)ᵀt + c(z)); `w` is k×m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenParams {
    #[serde(with = "serde_rows")]
    pub w: DMatrix<f64>,
    #[serde(with = "serde_vec")]
    pub c: DVector<f64>,
    pub activation: Activation,
}

impl HiddenParams {
    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    /// Pre-activations a(x) = W t(x) + c for `t` given one symbol per row.
    pub fn pre_activation(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        let a = t * self.w.transpose();
        DMatrix::from_fn(a.nrows(), a.ncols(), |i, z| a[(i, z)] + self.c[z])
    }

    /// Hidden outputs s(x), one symbol per row.
    pub fn apply(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        self.pre_activation(t).map(|a| self.activation.value(a))
    }

    /// Diagonal of J = diag σ′(c(z)).
    pub fn j_diag(&self) -> DVector<f64> {
        self.c.map(|c| self.activation.derivative(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalKl {
    /// ‖B̃ − Ξ^Y(Ξ^X)ᵀ‖²_F
    pub frob: f64,
    /// E_{P_Y}[(μ_sᵀṽ(Y) + d̃(Y))²]
    pub eta: f64,
    /// ½·frob + ½·eta
    pub value: f64,
}

fn check_features(c: &Cdm, s: &FeatureSet) -> Result<()> {
    if s.reference().len() != c.nx() {
        return Err(Error::DimensionMismatch(format!(
            "features over {} symbols, |X| = {}",
            s.reference().len(),
            c.nx()
        )));
    }
    Ok(())
}

/// Second-order surrogate of D(P_XY ‖ P_X·P̃_{Y|X}) for features `s`
/// (any mean; centered internally) and output parameters.
pub fn local_kl(c: &Cdm, s: &FeatureSet, params: &SoftmaxParams) -> Result<LocalKl> {
    check_features(c, s)?;
    params.check(c)?;
    if s.k() != params.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} features against {} weight columns",
            s.k(),
            params.k()
        )));
    }
    let py = c.py();
    let xi_x = s.centered().xi().clone();
    let xi_y = params.xi_y(py);
    let frob = linalg::frob2(&(c.matrix() - &xi_y * xi_x.transpose()));
    let mu = s.means();
    let shift = params.v_tilde(py) * mu + params.d_tilde(py);
    let eta = (0..py.len())
        .map(|y| py.get(y) * shift[y] * shift[y])
        .sum::<f64>();
    Ok(LocalKl {
        frob,
        eta,
        value: 0.5 * frob + 0.5 * eta,
    })
}

#[derive(Debug, Clone)]
pub struct ForwardProjection {
    pub params: SoftmaxParams,
    pub xi_y: DMatrix<f64>,
    /// max |ṽ_matrix − ṽ_conditional| between the two closed forms.
    pub forms_max_diff: f64,
    pub used_pseudo_inverse: bool,
}

/// Optimal output layer for fixed features: Ξ^Y* = B̃Ξ^X(Ξ^XᵀΞ^X)⁻¹,
/// ṽ*(y) = E[Λ_s⁻¹ s̃(X) | Y=y], d̃* = −μ_sᵀṽ*.
pub fn forward_projection(
    c: &Cdm,
    s: &FeatureSet,
    policy: InversePolicy,
) -> Result<ForwardProjection> {
    check_features(c, s)?;
    let s_tilde = s.centered();
    let xi_x = s_tilde.xi();
    let inv = linalg::sym_inv(&(xi_x.transpose() * xi_x), policy)?;
    let xi_y = c.matrix() * xi_x * &inv.matrix;
    let v_tilde = diag_inv_sqrt_times(c.py(), &xi_y);

    // conditional-expectation form: E[s̃ | Y=y] = Σ_x P(x,y)s̃(x)/P_Y(y)
    let joint = c.joint_table();
    let cond = joint * s_tilde.values();
    let cond = DMatrix::from_fn(cond.nrows(), cond.ncols(), |y, j| {
        cond[(y, j)] / c.py().get(y)
    });
    let v_ce = cond * &inv.matrix;
    let forms_max_diff = linalg::max_abs(&(&v_tilde - v_ce));

    let d_tilde = -(&v_tilde * s.means());
    Ok(ForwardProjection {
        params: SoftmaxParams::from_centered(v_tilde, &d_tilde, c.py()),
        xi_y,
        forms_max_diff,
        used_pseudo_inverse: inv.used_pseudo_inverse,
    })
}

#[derive(Debug, Clone)]
pub struct BackwardProjection {
    /// s* = s̃* + μ*.
    pub s: FeatureSet,
    pub mu: DVector<f64>,
    pub xi_x: DMatrix<f64>,
    pub forms_max_diff: f64,
    pub used_pseudo_inverse: bool,
}

/// Optimal features for fixed output parameters: Ξ^X* = B̃ᵀΞ^Y(Ξ^YᵀΞ^Y)⁻¹,
/// s̃*(x) = E[Λ_ṽ⁻¹ṽ(Y) | X=x], μ* = −Λ_ṽ⁻¹E[ṽ(Y)d̃(Y)].
pub fn backward_projection(
    c: &Cdm,
    params: &SoftmaxParams,
    policy: InversePolicy,
) -> Result<BackwardProjection> {
    params.check(c)?;
    let py = c.py();
    let v_tilde = params.v_tilde(py);
    let d_tilde = params.d_tilde(py);
    let xi_y = diag_sqrt_times(py, &v_tilde);
    let inv = linalg::sym_inv(&(xi_y.transpose() * &xi_y), policy)?;
    let xi_x = c.matrix().transpose() * &xi_y * &inv.matrix;
    let s_tilde = diag_inv_sqrt_times(c.px(), &xi_x);

    let joint = c.joint_table();
    let cond = joint.transpose() * &v_tilde;
    let cond = DMatrix::from_fn(cond.nrows(), cond.ncols(), |x, j| {
        cond[(x, j)] / c.px().get(x)
    });
    let s_ce = cond * &inv.matrix;
    let forms_max_diff = linalg::max_abs(&(&s_tilde - s_ce));

    let weighted_d = DVector::from_fn(py.len(), |y, _| py.get(y) * d_tilde[y]);
    let mu = -(&inv.matrix * (v_tilde.transpose() * weighted_d));
    let values = DMatrix::from_fn(s_tilde.nrows(), s_tilde.ncols(), |x, j| {
        s_tilde[(x, j)] + mu[j]
    });
    Ok(BackwardProjection {
        s: FeatureSet::new(values, c.px().clone())?,
        mu,
        xi_x,
        forms_max_diff,
        used_pseudo_inverse: inv.used_pseudo_inverse,
    })
}

#[derive(Debug, Clone)]
pub struct RankK {
    pub xi_y: DMatrix<f64>,
    pub xi_x: DMatrix<f64>,
    /// ½Σ_{i>k}σᵢ²
    pub loss: f64,
    pub sigmas: Vec<f64>,
}

/// Truncated-SVD split Ξ^Y = ψ^Y diag(σ), Ξ^X = ψ^X over the top k modes.
pub fn optimal_rank_k(c: &Cdm, k: usize) -> Result<RankK> {
    let svd = cdm_svd(c)?;
    let max = svd.k_max().saturating_sub(1);
    if k == 0 || k > max {
        return Err(Error::InvalidK { k, max });
    }
    let mut xi_y = svd.top_psi_y(k);
    for j in 0..k {
        xi_y.column_mut(j).scale_mut(svd.sigmas[j]);
    }
    let loss = 0.5 * svd.sigmas.iter().skip(k).map(|s| s * s).sum::<f64>();
    Ok(RankK {
        xi_y,
        xi_x: svd.top_psi_x(k),
        loss,
        sigmas: svd.sigmas,
    })
}

#[derive(Debug, Clone)]
pub struct AlternatingResult {
    pub xi_y: DMatrix<f64>,
    /// Orthonormal columns spanning the converged feature subspace.
    pub xi_x: DMatrix<f64>,
    pub iterations: usize,
    pub last_change: f64,
    /// The fixed point captures less energy than the top-k singular modes,
    /// meaning the start was orthogonal to part of the dominant subspace.
    pub degenerate_init: bool,
}

/// Alternate the forward and backward projections from `init` (|X|×k)
/// until the product Ξ^Y(Ξ^X)ᵀ changes by at most `tol` in Frobenius norm.
pub fn alternating_projection(
    c: &Cdm,
    k: usize,
    init: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<AlternatingResult> {
    if init.shape() != (c.nx(), k) {
        return Err(Error::DimensionMismatch(format!(
            "initial Ξ^X must be {}x{k}",
            c.nx()
        )));
    }
    let b = c.matrix();
    let forward = |xi_x: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let g = linalg::sym_inv(&(xi_x.transpose() * xi_x), InversePolicy::PseudoInverse)?;
        Ok(b * xi_x * g.matrix)
    };
    let mut xi_x = linalg::orthonormal_columns(init);
    if xi_x.ncols() != k {
        return Err(Error::SingularCovariance {
            min_eig: 0.0,
            max_eig: 0.0,
        });
    }
    let mut xi_y = forward(&xi_x)?;
    let mut product = &xi_y * xi_x.transpose();
    let mut change = f64::INFINITY;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let g = linalg::sym_inv(&(xi_y.transpose() * &xi_y), InversePolicy::PseudoInverse)?;
        let back = b.transpose() * &xi_y * g.matrix;
        let q = linalg::orthonormal_columns(&back);
        if q.ncols() < k {
            // the backward image lost rank; keep the span it still has
            xi_x = linalg::orthonormal_columns(&DMatrix::from_columns(
                &q.column_iter()
                    .chain(xi_x.column_iter())
                    .map(|c| c.into_owned())
                    .collect::<Vec<_>>(),
            ))
            .columns(0, k)
            .into_owned();
        } else {
            xi_x = q;
        }
        xi_y = forward(&xi_x)?;
        let next = &xi_y * xi_x.transpose();
        change = (&next - &product).norm();
        product = next;
        if change <= tol {
            break;
        }
    }
    if change > tol {
        return Err(Error::NoConvergence {
            what: "alternating projection",
            iterations: it,
            residual: change,
        });
    }
    let svd = cdm_svd(c)?;
    let target = svd.energy(k);
    let captured = linalg::frob2(&(b * &xi_x));
    Ok(AlternatingResult {
        xi_y,
        xi_x,
        iterations: it,
        last_change: change,
        degenerate_init: captured < target - 1e-8 * target.max(f64::MIN_POSITIVE),
    })
}

/// Ξ^X minimizing ‖B̃ − Ξ^Y(Ξ^X)ᵀ‖_F for fixed Ξ^Y.
pub fn backward_xi(c: &Cdm, xi_y: &DMatrix<f64>, policy: InversePolicy) -> Result<DMatrix<f64>> {
    let g = linalg::sym_inv(&(xi_y.transpose() * xi_y), policy)?;
    Ok(c.matrix().transpose() * xi_y * g.matrix)
}

/// Both sides of ‖B̃ − Ξ^YΞ_aᵀ‖² − ‖B̃ − Ξ^YΞ_bᵀ‖² = ‖Ξ^YΞ_bᵀ − Ξ^YΞ_aᵀ‖²,
/// which holds when Ξ_b is the backward optimum for Ξ^Y.
pub fn pythagorean_gap(
    c: &Cdm,
    xi_y: &DMatrix<f64>,
    xi_a: &DMatrix<f64>,
    xi_b: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    if xi_a.shape() != xi_b.shape() || xi_a.nrows() != c.nx() || xi_y.nrows() != c.ny() {
        return Err(Error::DimensionMismatch(
            "Pythagorean identity operands".into(),
        ));
    }
    let b = c.matrix();
    let pa = xi_y * xi_a.transpose();
    let pb = xi_y * xi_b.transpose();
    let lhs = linalg::frob2(&(b - &pa)) - linalg::frob2(&(b - &pb));
    let rhs = linalg::frob2(&(pb - pa));
    Ok((lhs, rhs))
}

fn check_j(j: &DVector<f64>) -> Result<()> {
    match j.iter().position(|v| !v.is_finite() || *v == 0.0) {
        Some(index) => Err(Error::InvalidActivationPoint { index }),
        None => Ok(()),
    }
}

/// ½‖ΘB₁ − ΘWΞ₁ᵀ‖²_F + ½(μ_s − μ*)ᵀΛ_ṽ(μ_s − μ*) with
/// Θ = (Ξ^YᵀΞ^Y)^{1/2}J.
#[allow(clippy::too_many_arguments)]
pub fn hidden_loss_gap(
    xi_y: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    w: &DMatrix<f64>,
    xi1: &DMatrix<f64>,
    j: &DVector<f64>,
    mu_s: &DVector<f64>,
    mu_star: &DVector<f64>,
    lambda_v: &DMatrix<f64>,
) -> Result<f64> {
    check_j(j)?;
    let theta = linalg::sym_sqrt(&(xi_y.transpose() * xi_y)) * DMatrix::from_diagonal(j);
    let frob = linalg::frob2(&(&theta * b1 - &theta * w * xi1.transpose()));
    let dm = mu_s - mu_star;
    let kappa = (dm.transpose() * lambda_v * &dm)[(0, 0)];
    Ok(0.5 * frob + 0.5 * kappa)
}

/// Which side of the activation range a hidden mean was clamped to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Saturation {
    Interior,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct BoxQp {
    pub mu: DVector<f64>,
    /// ‖μ − Π(μ − Λ(μ − μ*))‖_∞, zero exactly at a KKT point.
    pub kkt_residual: f64,
    pub iterations: usize,
}

pub const BOX_QP_TOL: f64 = 1e-10;

/// Projected residual of the box-constrained quadratic at `mu`.
pub fn box_qp_kkt(
    lambda: &DMatrix<f64>,
    target: &DVector<f64>,
    lo: f64,
    hi: f64,
    mu: &DVector<f64>,
) -> f64 {
    let grad = lambda * (mu - target);
    let proj = (mu - grad).map(|v| v.clamp(lo, hi));
    (mu - proj).amax()
}

/// minimize (μ − μ*)ᵀΛ(μ − μ*) over lo ≤ μ ≤ hi. Diagonal Λ is solved by
/// clipping; otherwise projected gradient with step 1/λ_max(Λ).
pub fn box_qp(lambda: &DMatrix<f64>, target: &DVector<f64>, lo: f64, hi: f64) -> Result<BoxQp> {
    let k = target.len();
    let scale = linalg::max_abs(lambda).max(f64::MIN_POSITIVE);
    let off_diag = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .fold(0.0_f64, |m, (i, j)| m.max(lambda[(i, j)].abs()));
    let clip = target.map(|v| v.clamp(lo, hi));
    if off_diag <= 1e-14 * scale {
        let kkt = box_qp_kkt(lambda, target, lo, hi, &clip);
        return Ok(BoxQp {
            mu: clip,
            kkt_residual: kkt,
            iterations: 0,
        });
    }
    let lmax = linalg::spectral_norm(lambda);
    let step = 1.0 / lmax;
    let mut mu = clip;
    let max_iter = 1_000_000;
    for it in 1..=max_iter {
        let grad = lambda * (&mu - target);
        let next = (&mu - grad * step).map(|v| v.clamp(lo, hi));
        let moved = (&next - &mu).amax();
        mu = next;
        if moved <= BOX_QP_TOL * step.min(1.0) {
            let kkt = box_qp_kkt(lambda, target, lo, hi, &mu);
            return Ok(BoxQp {
                mu,
                kkt_residual: kkt,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "projected gradient for the hidden bias",
        iterations: max_iter,
        residual: box_qp_kkt(lambda, target, lo, hi, &mu),
    })
}

/// The hidden-layer design problem for a frozen output layer and a fixed
/// input map t: everything needed to evaluate and minimize the loss gap.
#[derive(Debug, Clone)]
pub struct HiddenProblem {
    pub xi_y: DMatrix<f64>,
    pub lambda_v: DMatrix<f64>,
    /// Backward optimum Ξ^X* (|X|×k).
    pub xi_x_star: DMatrix<f64>,
    pub mu_star: DVector<f64>,
    /// Information vectors of the centered input t̃ (|X|×m).
    pub xi1: DMatrix<f64>,
    pub mu_t: DVector<f64>,
    pub used_pseudo_inverse: bool,
}

#[derive(Debug, Clone)]
pub struct HiddenOptimum {
    pub params: HiddenParams,
    pub mu: DVector<f64>,
    pub saturation: Vec<Saturation>,
    pub kkt_residual: f64,
    pub used_pseudo_inverse: bool,
}

impl HiddenProblem {
    pub fn new(
        c: &Cdm,
        output: &SoftmaxParams,
        t: &FeatureSet,
        policy: InversePolicy,
    ) -> Result<Self> {
        check_features(c, t)?;
        let back = backward_projection(c, output, policy)?;
        let xi_y = output.xi_y(c.py());
        Ok(Self {
            lambda_v: xi_y.transpose() * &xi_y,
            xi_y,
            xi_x_star: back.xi_x,
            mu_star: back.mu,
            xi1: t.centered().xi().clone(),
            mu_t: t.means(),
            used_pseudo_inverse: back.used_pseudo_inverse,
        })
    }

    pub fn k(&self) -> usize {
        self.xi_x_star.ncols()
    }

    /// B₁ = J⁻¹(Ξ^X*)ᵀ.
    pub fn b1(&self, j: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_j(j)?;
        let t = self.xi_x_star.transpose();
        Ok(DMatrix::from_fn(t.nrows(), t.ncols(), |z, x| {
            t[(z, x)] / j[z]
        }))
    }

    pub fn gap(&self, w: &DMatrix<f64>, mu_s: &DVector<f64>, j: &DVector<f64>) -> Result<f64> {
        let b1 = self.b1(j)?;
        hidden_loss_gap(
            &self.xi_y,
            &b1,
            w,
            &self.xi1,
            j,
            mu_s,
            &self.mu_star,
            &self.lambda_v,
        )
    }

    /// W* = B₁Ξ₁(Ξ₁ᵀΞ₁)⁻¹ for the given J.
    pub fn optimal_weights(
        &self,
        j: &DVector<f64>,
        policy: InversePolicy,
    ) -> Result<(DMatrix<f64>, bool)> {
        let b1 = self.b1(j)?;
        let g = linalg::sym_inv(&(self.xi1.transpose() * &self.xi1), policy)?;
        Ok((b1 * &self.xi1 * g.matrix, g.used_pseudo_inverse))
    }

    /// Bias means by the box-constrained quadratic, then weights at the
    /// matching activation point and c = σ⁻¹(μ) − Wμ_t. Saturated units get
    /// zero weights and an infinite bias.
    pub fn optimum(&self, activation: Activation, policy: InversePolicy) -> Result<HiddenOptimum> {
        let (lo, hi) = activation.range();
        let qp = box_qp(&self.lambda_v, &self.mu_star, lo, hi)?;
        let k = self.k();
        let saturation: Vec<Saturation> = qp
            .mu
            .iter()
            .map(|&m| {
                if m <= lo {
                    Saturation::Lower
                } else if m >= hi {
                    Saturation::Upper
                } else {
                    Saturation::Interior
                }
            })
            .collect();
        let interior: Vec<usize> = (0..k)
            .filter(|&z| saturation[z] == Saturation::Interior)
            .collect();
        let m = self.xi1.ncols();
        let mut w = DMatrix::zeros(k, m);
        let mut c = DVector::zeros(k);
        let mut pinv = self.used_pseudo_inverse;
        if !interior.is_empty() {
            // J is only needed on the interior units; fill saturated ones with 1
            let j = DVector::from_fn(k, |z, _| {
                if saturation[z] == Saturation::Interior {
                    activation.derivative_at_value(qp.mu[z])
                } else {
                    1.0
                }
            });
            let (full, used) = self.optimal_weights(&j, policy)?;
            pinv |= used;
            for &z in &interior {
                w.set_row(z, &full.row(z));
            }
        }
        for z in 0..k {
            c[z] = match saturation[z] {
                Saturation::Interior => {
                    activation.inverse(qp.mu[z]) - w.row(z).dot(&self.mu_t.transpose())
                }
                Saturation::Lower => f64::NEG_INFINITY,
                Saturation::Upper => f64::INFINITY,
            };
        }
        Ok(HiddenOptimum {
            params: HiddenParams { w, c, activation },
            mu: qp.mu,
            saturation,
            kkt_residual: qp.kkt_residual,
            used_pseudo_inverse: pinv,
        })
    }
}
