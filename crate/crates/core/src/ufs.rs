//! Universal feature selection: random ε-configurations of an attribute V
//! of Y, the averaged-exponent metric of a feature subspace of X, and a
//! Monte-Carlo check of the averaged exponent.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::cdm::{markov_transport, Cdm, FeatureSet};
use crate::error::{Error, Result};
use crate::geom::local_pairwise_exponent;
use crate::linalg::{self, InversePolicy};
use crate::prob::{FiniteDist, InfoVector};

const CONFIG_TOL: f64 = 1e-10;

/// Radial law of the sampled information vectors before recentering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum RadialLaw {
    /// Every direction drawn at radius ε.
    #[default]
    Sphere,
    /// Radius ε·U^{1/(d)} with d = |Y| − 1, uniform in the ball.
    UniformBall,
}

/// Prior of V and the conditional information vectors φ_v of P_{Y|V=v}
/// around P_Y.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    prior: FiniteDist,
    py: FiniteDist,
    phis: Vec<DVector<f64>>,
    eps: f64,
}

impl Configuration {
    /// Validates mixture consistency, ‖φ_v‖ ≤ ε and φ_v ⟂ √P_Y.
    pub fn new(
        prior: FiniteDist,
        py: FiniteDist,
        phis: Vec<DVector<f64>>,
        eps: f64,
    ) -> Result<Self> {
        if phis.len() != prior.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} information vectors for a prior over {} symbols",
                phis.len(),
                prior.len()
            )));
        }
        py.require_strictly_positive()?;
        let sq = py.sqrt_vector();
        let mut mix = DVector::zeros(py.len());
        for (v, phi) in phis.iter().enumerate() {
            if phi.len() != py.len() {
                return Err(Error::DimensionMismatch("information vector length".into()));
            }
            let inner = sq.dot(phi);
            if inner.abs() > CONFIG_TOL {
                return Err(Error::InvalidInfoVector { inner });
            }
            if phi.norm() > eps * (1.0 + 1e-12) + 1e-15 {
                return Err(Error::InvalidEps {
                    eps,
                    reason: format!("‖φ_{v}‖ = {} exceeds ε", phi.norm()),
                });
            }
            mix += phi * prior.get(v);
        }
        if mix.norm() > CONFIG_TOL {
            return Err(Error::InvalidInput(format!(
                "mixture Σ P_V(v)φ_v has norm {:e}",
                mix.norm()
            )));
        }
        Ok(Self {
            prior,
            py,
            phis,
            eps,
        })
    }

    pub fn nv(&self) -> usize {
        self.phis.len()
    }

    pub fn prior(&self) -> &FiniteDist {
        &self.prior
    }

    pub fn py(&self) -> &FiniteDist {
        &self.py
    }

    pub fn phis(&self) -> &[DVector<f64>] {
        &self.phis
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn info_vector(&self, v: usize) -> InfoVector {
        InfoVector::from_phi(self.phis[v].clone(), self.py.clone())
            .expect("validated at construction")
    }

    /// P_{Y|V}(·|v) = P_Y + √P_Y ⊙ φ_v.
    pub fn conditional(&self, v: usize) -> Result<FiniteDist> {
        self.info_vector(v).to_dist()
    }

    /// Gram matrix ⟨φ_v, φ_v'⟩.
    pub fn gram(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nv(), self.nv(), |i, j| self.phis[i].dot(&self.phis[j]))
    }

    /// ‖φ_v − φ_v'‖² averaged uniformly over distinct pairs.
    pub fn mean_pair_distance_sq(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..self.nv() {
            for j in (i + 1)..self.nv() {
                sum += (&self.phis[i] - &self.phis[j]).norm_squared();
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

fn check_eps(py: &FiniteDist, eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidEps {
            eps,
            reason: "ε must be finite and non-negative".into(),
        });
    }
    py.require_strictly_positive()?;
    let min = py.probs().iter().cloned().fold(f64::INFINITY, f64::min);
    // |φ(y)| ≤ ‖φ‖ ≤ ε < √P_Y(y) keeps every conditional strictly positive
    if eps >= min.sqrt() {
        return Err(Error::InvalidEps {
            eps,
            reason: format!("ε must be below √min P_Y = {}", min.sqrt()),
        });
    }
    Ok(())
}

/// Uniform prior over |V| symbols, spherical radial law.
pub fn random_configuration<R: Rng + ?Sized>(
    py: &FiniteDist,
    nv: usize,
    eps: f64,
    rng: &mut R,
) -> Result<Configuration> {
    if nv < 2 {
        return Err(Error::InvalidInput(format!(
            "|V| must be at least 2, got {nv}"
        )));
    }
    random_configuration_with(py, &FiniteDist::uniform(nv), eps, RadialLaw::Sphere, rng)
}

/// Gaussian directions in the subspace ⟂ √P_Y, drawn at radii from `law`,
/// recentered so Σ P_V(v)φ_v = 0, then scaled by a common factor so the
/// largest vector has norm ε. The common factor keeps the ensemble
/// rotation invariant.
pub fn random_configuration_with<R: Rng + ?Sized>(
    py: &FiniteDist,
    prior: &FiniteDist,
    eps: f64,
    law: RadialLaw,
    rng: &mut R,
) -> Result<Configuration> {
    if prior.len() < 2 {
        return Err(Error::InvalidInput("|V| must be at least 2".into()));
    }
    check_eps(py, eps)?;
    let ny = py.len();
    let sq = py.sqrt_vector();
    let dim = (ny - 1) as f64;
    let mut phis: Vec<DVector<f64>> = (0..prior.len())
        .map(|_| {
            let mut z = DVector::from_fn(ny, |_, _| rng.sample::<f64, _>(StandardNormal));
            z -= &sq * sq.dot(&z);
            let r = match law {
                RadialLaw::Sphere => 1.0,
                RadialLaw::UniformBall => rng.random::<f64>().powf(1.0 / dim),
            };
            let n = z.norm();
            z * (r / n)
        })
        .collect();
    // φ_v − Σ_w P(w)z_w written as Σ_w P(w)(z_v − z_w): antisymmetric in
    // floating point, so two equiprobable symbols come out exactly antipodal
    let raw = phis.clone();
    for (v, phi) in phis.iter_mut().enumerate() {
        let mut centered = DVector::zeros(ny);
        for (w, zw) in raw.iter().enumerate() {
            centered += (&raw[v] - zw) * prior.get(w);
        }
        // keep exactly ⟂ √P_Y after the subtraction
        let p = sq.dot(&centered);
        *phi = &centered - &sq * p;
    }
    let max = phis.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let scale = if max > 0.0 { eps / max } else { 0.0 };
    for phi in phis.iter_mut() {
        *phi *= scale;
    }
    Configuration::new(prior.clone(), py.clone(), phis, eps)
}

/// Haar-random orthogonal map of ℝ^|Y| that fixes √P_Y.
pub fn haar_rotation_fixing<R: Rng + ?Sized>(py: &FiniteDist, rng: &mut R) -> DMatrix<f64> {
    let sq = py.sqrt_vector();
    let u = linalg::complement_basis(&sq);
    let r = linalg::haar_orthogonal(u.ncols(), rng);
    &u * r * u.transpose() + &sq * sq.transpose()
}

/// φ̃_v = Qφ_v for an orthogonal Q fixing √P_Y.
pub fn rotate_configuration(c: &Configuration, q: &DMatrix<f64>) -> Result<Configuration> {
    let n = c.py.len();
    if q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "rotation must be {n}x{n}"
        )));
    }
    let orth = linalg::max_abs(&(q.transpose() * q - DMatrix::identity(n, n)));
    let sq = c.py.sqrt_vector();
    let fix = (q * &sq - &sq).amax();
    let residual = orth.max(fix);
    if residual > 1e-10 {
        return Err(Error::InvalidRotation { residual });
    }
    let phis = c.phis.iter().map(|p| q * p).collect();
    Configuration::new(c.prior.clone(), c.py.clone(), phis, c.eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UfsMetric {
    pub value: f64,
    pub used_pseudo_inverse: bool,
}

/// ‖B̃ Ξ (ΞᵀΞ)^{-1/2}‖²_F.
pub fn ufs_metric(c: &Cdm, xi: &DMatrix<f64>, policy: InversePolicy) -> Result<UfsMetric> {
    if xi.nrows() != c.nx() {
        return Err(Error::DimensionMismatch(format!(
            "Ξ has {} rows, |X| = {}",
            xi.nrows(),
            c.nx()
        )));
    }
    let w = linalg::sym_inv_sqrt(&(xi.transpose() * xi), policy)?;
    let proj = c.matrix() * xi * &w.matrix;
    Ok(UfsMetric {
        value: linalg::frob2(&proj),
        used_pseudo_inverse: w.used_pseudo_inverse,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct McOpts {
    pub nv: usize,
    pub eps: f64,
    pub n_trials: usize,
    pub seed: u64,
    pub law: RadialLaw,
    pub keep_records: bool,
}

impl Default for McOpts {
    fn default() -> Self {
        Self {
            nv: 4,
            eps: 1e-2,
            n_trials: 20_000,
            seed: 0,
            law: RadialLaw::Sphere,
            keep_records: false,
        }
    }
}

/// One (trial, pair) exponent, for trace files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub v: usize,
    pub v_prime: usize,
    pub exponent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub mc_mean: f64,
    pub std_error: f64,
    /// E‖φ_v − φ_v'‖² / (8|Y|) · metric.
    pub theory: f64,
    /// Same with |Y| − 1, the dimension of the subspace the ensemble lives in.
    pub theory_subspace: f64,
    pub mean_pair_distance_sq: f64,
    pub metric: f64,
    pub n_trials: usize,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

/// Averaged pairwise exponent of the features Ξ over random configurations.
///
/// Ξ is centered (the √P_X component removed) and whitened before use;
/// the metric in the theory value is evaluated on the centered Ξ. Trial `t`
/// draws from ChaCha8 seeded with `seed` on stream `t`, so the result does
/// not depend on thread scheduling.
pub fn expected_exponent_mc(c: &Cdm, xi: &DMatrix<f64>, opts: &McOpts) -> Result<McReport> {
    if opts.n_trials == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if opts.nv < 2 {
        return Err(Error::InvalidInput(format!(
            "|V| must be at least 2, got {}",
            opts.nv
        )));
    }
    check_eps(c.py(), opts.eps)?;
    let sqx = c.px().sqrt_vector();
    let centered = xi - &sqx * (sqx.transpose() * xi);
    let features = FeatureSet::from_xi(centered.clone(), c.px().clone())?
        .whitened(InversePolicy::PseudoInverse)?;
    let metric = ufs_metric(c, &centered, InversePolicy::PseudoInverse)?.value;
    let prior = FiniteDist::uniform(opts.nv);

    let per_trial: Vec<(f64, f64, Vec<TrialRecord>)> = (0..opts.n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(t as u64);
            let cfg = random_configuration_with(c.py(), &prior, opts.eps, opts.law, &mut rng)?;
            let transported: Vec<InfoVector> = (0..cfg.nv())
                .map(|v| markov_transport(c, &cfg.info_vector(v)))
                .collect::<Result<_>>()?;
            let mut sum = 0.0;
            let mut pairs = 0usize;
            let mut records = Vec::new();
            for v in 0..cfg.nv() {
                for w in (v + 1)..cfg.nv() {
                    let e = local_pairwise_exponent(&transported[v], &transported[w], &features)?
                        .exponent;
                    sum += e;
                    pairs += 1;
                    if opts.keep_records {
                        records.push(TrialRecord {
                            trial: t,
                            v,
                            v_prime: w,
                            exponent: e,
                        });
                    }
                }
            }
            Ok((sum / pairs as f64, cfg.mean_pair_distance_sq(), records))
        })
        .collect::<Result<_>>()?;

    let n = opts.n_trials as f64;
    let mc_mean = per_trial.iter().map(|t| t.0).sum::<f64>() / n;
    let var = if opts.n_trials > 1 {
        per_trial
            .iter()
            .map(|t| (t.0 - mc_mean).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let dist = per_trial.iter().map(|t| t.1).sum::<f64>() / n;
    let ny = c.ny() as f64;
    Ok(McReport {
        mc_mean,
        std_error: (var / n).sqrt(),
        theory: dist / (8.0 * ny) * metric,
        theory_subspace: dist / (8.0 * (ny - 1.0)) * metric,
        mean_pair_distance_sq: dist,
        metric,
        n_trials: opts.n_trials,
        records: per_trial.into_iter().flat_map(|t| t.2).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdm::{build_cdm, cdm_svd};
    use crate::prob::JointDist;
    use approx::assert_abs_diff_eq;

    fn py() -> FiniteDist {
        FiniteDist::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap()
    }

    #[test]
    fn zero_eps_gives_reference_conditionals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_configuration(&py(), 3, 0.0, &mut rng).unwrap();
        for v in 0..3 {
            assert_eq!(c.phis()[v].norm(), 0.0);
            assert_eq!(c.conditional(v).unwrap(), py());
        }
    }

    #[test]
    fn two_symbols_are_antipodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_configuration(&py(), 2, 0.05, &mut rng).unwrap();
        assert_eq!(c.phis()[0], -c.phis()[1].clone());
        assert_abs_diff_eq!(c.phis()[0].norm(), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn large_eps_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            random_configuration(&py(), 3, 0.4, &mut rng),
            Err(Error::InvalidEps { .. })
        ));
        assert!(matches!(
            random_configuration(&py(), 3, -1.0, &mut rng),
            Err(Error::InvalidEps { .. })
        ));
    }

    #[test]
    fn rotation_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_configuration(&py(), 4, 0.1, &mut rng).unwrap();
        let same = rotate_configuration(&c, &DMatrix::identity(4, 4)).unwrap();
        assert_eq!(same, c);
        let q = haar_rotation_fixing(&py(), &mut rng);
        let r = rotate_configuration(&c, &q).unwrap();
        assert!((r.gram() - c.gram()).amax() < 1e-12);
        let mut bad = q.clone();
        bad[(0, 0)] += 1e-6;
        assert!(matches!(
            rotate_configuration(&c, &bad),
            Err(Error::InvalidRotation { .. })
        ));
        // a permutation is orthogonal but moves √P_Y
        let perm = DMatrix::from_fn(4, 4, |i, j| if (i + 1) % 4 == j { 1.0 } else { 0.0 });
        assert!(matches!(
            rotate_configuration(&c, &perm),
            Err(Error::InvalidRotation { .. })
        ));
    }

    #[test]
    fn metric_of_singular_vectors_and_null_space() {
        let t = DMatrix::from_row_slice(
            3,
            4,
            &[
                0.10, 0.05, 0.08, 0.07, 0.02, 0.12, 0.06, 0.10, 0.09, 0.08, 0.13, 0.10,
            ],
        );
        let c = build_cdm(&JointDist::new(t).unwrap()).unwrap();
        let s = cdm_svd(&c).unwrap();
        let m = ufs_metric(&c, &s.top_psi_x(2), InversePolicy::Strict).unwrap();
        assert_abs_diff_eq!(m.value, s.energy(2), epsilon = 1e-13);
        assert_abs_diff_eq!(m.value, c.frob2(), epsilon = 1e-13);
        let null = DMatrix::from_column_slice(4, 1, c.px().sqrt_vector().as_slice());
        assert!(ufs_metric(&c, &null, InversePolicy::Strict).unwrap().value < 1e-28);
        assert!(matches!(
            ufs_metric(&c, &DMatrix::zeros(4, 1), InversePolicy::Strict),
            Err(Error::SingularCovariance { .. })
        ));
        let p = ufs_metric(&c, &DMatrix::zeros(4, 1), InversePolicy::PseudoInverse).unwrap();
        assert!(p.used_pseudo_inverse && p.value == 0.0);
    }
}
