//! Error exponents of feature-based binary tests.
//!
//! The local form ⅛⟨φ₁−φ₂, ξᵢ⟩² is checked against an exact oracle that
//! minimizes D(P‖P_j) over the linear family {P : E_P[f] = m} by Newton's
//! method on the convex dual (exponential tilting of P_j).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cdm::FeatureSet;
use crate::error::{Error, Result};
use crate::linalg::{self, InversePolicy};
use crate::prob::{FiniteDist, InfoVector};

/// Normalization tolerance demanded of feature sets fed to the local formula.
pub const NORMALIZED_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentResult {
    pub exponent: f64,
    pub per_feature: Vec<f64>,
}

/// E_{h_i} = ⅛⟨φ₁ − φ₂, ξ_i⟩² for each normalized feature, and their sum.
pub fn local_pairwise_exponent(
    phi1: &InfoVector,
    phi2: &InfoVector,
    features: &FeatureSet,
) -> Result<ExponentResult> {
    let n = features.reference().len();
    if phi1.phi().len() != n || phi2.phi().len() != n {
        return Err(Error::DimensionMismatch(format!(
            "information vectors of length {}/{} against alphabet of {n}",
            phi1.phi().len(),
            phi2.phi().len()
        )));
    }
    if !features.is_normalized(NORMALIZED_TOL) {
        let mean = features.means().amax();
        let cov = features.second_moment() - DMatrix::identity(features.k(), features.k());
        return Err(Error::FeaturesNotNormalized {
            residual: mean.max(linalg::max_abs(&cov)),
        });
    }
    let diff = phi1.phi() - phi2.phi();
    let proj = features.xi().transpose() * diff;
    let per_feature: Vec<f64> = proj.iter().map(|p| p * p / 8.0).collect();
    Ok(ExponentResult {
        exponent: per_feature.iter().sum(),
        per_feature,
    })
}

/// How the oracle picks the moment target m(λ) = λ·m₁ + (1−λ)·m₂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaMode {
    /// λ = ½; the exponent is min(E₁, E₂). Appropriate in the local regime.
    #[default]
    Half,
    /// Bisection for the λ where E₁(λ) = E₂(λ).
    Search,
}

#[derive(Debug, Clone, Copy)]
pub struct ChernoffOpts {
    pub mode: LambdaMode,
    /// Tolerance on the moment residual ‖E_θ[f] − m‖.
    pub tol: f64,
    pub max_newton: usize,
    pub max_bisect: usize,
}

impl Default for ChernoffOpts {
    fn default() -> Self {
        Self {
            mode: LambdaMode::Half,
            tol: 1e-10,
            max_newton: 200,
            max_bisect: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChernoffResult {
    pub exponent: f64,
    pub lambda: f64,
    pub e1: f64,
    pub e2: f64,
}

/// E_P[f] for feature values stored one symbol per row.
fn moments(p: &FiniteDist, f: &DMatrix<f64>) -> DVector<f64> {
    f.transpose() * p.to_vector()
}

/// min D(P‖Q) subject to E_P[f] = m, via max_θ θᵀm − log E_Q[e^{θᵀf}].
pub fn i_projection(
    q: &FiniteDist,
    f: &DMatrix<f64>,
    m: &DVector<f64>,
    opts: &ChernoffOpts,
) -> Result<f64> {
    let (n, k) = f.shape();
    if q.len() != n || m.len() != k {
        return Err(Error::DimensionMismatch("i-projection shapes".into()));
    }
    let logq: Vec<f64> = q.probs().iter().map(|p| p.ln()).collect();
    // log-partition and tilted moments at θ
    let eval = |theta: &DVector<f64>| {
        let s = f * theta;
        let mut mx = f64::NEG_INFINITY;
        for i in 0..n {
            if q.get(i) > 0.0 {
                mx = mx.max(s[i] + logq[i]);
            }
        }
        let w: Vec<f64> = (0..n)
            .map(|i| {
                if q.get(i) > 0.0 {
                    (s[i] + logq[i] - mx).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let z: f64 = w.iter().sum();
        let alpha = mx + z.ln();
        let pt = DVector::from_iterator(n, w.iter().map(|v| v / z));
        let mean = f.transpose() * &pt;
        let mut cov = DMatrix::zeros(k, k);
        for i in 0..n {
            let d = f.row(i).transpose() - &mean;
            cov += &d * d.transpose() * pt[i];
        }
        let dual = theta.dot(m) - alpha;
        (dual, mean, cov)
    };
    let mut theta = DVector::zeros(k);
    let (mut dual, mut mean, mut cov) = eval(&theta);
    for _ in 0..opts.max_newton {
        let r = m - &mean;
        if r.norm() <= opts.tol {
            return Ok(dual.max(0.0));
        }
        let hinv = linalg::sym_inv(&cov, InversePolicy::PseudoInverse)?.matrix;
        let step = hinv * &r;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            let (d2, m2, c2) = eval(&cand);
            if d2.is_finite() && d2 >= dual - 1e-15 * dual.abs().max(1.0) {
                theta = cand;
                dual = d2;
                mean = m2;
                cov = c2;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let residual = (m - &mean).norm();
    if residual <= opts.tol {
        return Ok(dual.max(0.0));
    }
    Err(Error::NoConvergence {
        what: "Newton on the tilted log-partition",
        iterations: opts.max_newton,
        residual,
    })
}

/// Exact exponent of the test that thresholds the empirical mean of the
/// statistic `features`, in the equalized-error sense.
pub fn chernoff_oracle(
    p1: &FiniteDist,
    p2: &FiniteDist,
    features: &FeatureSet,
    opts: &ChernoffOpts,
) -> Result<ChernoffResult> {
    let f = features.values();
    if p1.len() != f.nrows() || p2.len() != f.nrows() {
        return Err(Error::DimensionMismatch(
            "distributions and features differ in alphabet".into(),
        ));
    }
    let m1 = moments(p1, f);
    let m2 = moments(p2, f);
    let at = |lambda: f64| -> Result<(f64, f64)> {
        let m = &m1 * lambda + &m2 * (1.0 - lambda);
        Ok((
            i_projection(p1, f, &m, opts)?,
            i_projection(p2, f, &m, opts)?,
        ))
    };
    match opts.mode {
        LambdaMode::Half => {
            let (e1, e2) = at(0.5)?;
            Ok(ChernoffResult {
                exponent: e1.min(e2),
                lambda: 0.5,
                e1,
                e2,
            })
        }
        LambdaMode::Search => {
            // E₁ falls from E₁(0) to 0 as λ → 1, E₂ rises from 0.
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            let (mut e1, mut e2) = at(0.5)?;
            let mut lambda = 0.5;
            for _ in 0..opts.max_bisect {
                lambda = 0.5 * (lo + hi);
                (e1, e2) = at(lambda)?;
                if e1 > e2 {
                    lo = lambda;
                } else {
                    hi = lambda;
                }
                if hi - lo < 1e-14 || (e1 - e2).abs() <= opts.tol * e1.max(e2).max(1e-300) {
                    break;
                }
            }
            Ok(ChernoffResult {
                exponent: e1.min(e2),
                lambda,
                e1,
                e2,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RieCheck {
    pub mc_estimate: f64,
    pub std_error: f64,
    pub closed_form: f64,
}

/// Monte-Carlo E‖zᵀA‖² for standard Gaussian z ∈ ℝᴹ against the closed
/// form (1/M)·E‖z‖²·‖A‖²_F = ‖A‖²_F.
pub fn rie_expectation_check<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    m: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<RieCheck> {
    if a.nrows() != m {
        return Err(Error::DimensionMismatch(format!(
            "A has {} rows, M = {m}",
            a.nrows()
        )));
    }
    if n_samples == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = (a.transpose() * z).norm_squared();
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = if n_samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let ez2 = m as f64;
    Ok(RieCheck {
        mc_estimate: mean,
        std_error: (var / n).sqrt(),
        closed_form: ez2 / m as f64 * linalg::frob2(a),
    })
}
