//! Experiment orchestration: ε-controlled synthetic joints, sampling, the
//! four experiment suites and their report files.

pub mod config;
pub mod experiments;
pub mod svg;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::prob::{FiniteDist, JointDist};

pub use config::{ExperimentConfig, ExperimentId, Marginals};
pub use experiments::{run_experiment, Check, Summary};

pub const GEN_MAX_RETRIES: usize = 1000;

/// P_XY = P_X P_Y + ε·√(P_X P_Y) ⊙ Z, where Z (|Y|×|X|) is Gaussian,
/// projected orthogonal to √P_Y on the left and √P_X on the right, and
/// scaled to unit Frobenius norm, so the CDM is exactly εZ and the
/// dependence χ² is ε². Draws with a negative entry are redrawn.
pub fn gen_eps_joint<R: Rng + ?Sized>(
    px: &FiniteDist,
    py: &FiniteDist,
    eps: f64,
    rng: &mut R,
) -> Result<JointDist> {
    px.require_strictly_positive()?;
    py.require_strictly_positive()?;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidEps {
            eps,
            reason: "must be finite and non-negative".into(),
        });
    }
    let product = JointDist::product(px, py);
    if eps == 0.0 {
        return Ok(product);
    }
    let (nx, ny) = (px.len(), py.len());
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidEps {
            eps,
            reason: "a dependent joint needs at least two symbols on each side".into(),
        });
    }
    let sx = px.sqrt_vector();
    let sy = py.sqrt_vector();
    let left = DMatrix::identity(ny, ny) - &sy * sy.transpose();
    let right = DMatrix::identity(nx, nx) - &sx * sx.transpose();
    for _ in 0..GEN_MAX_RETRIES {
        let z = DMatrix::from_fn(ny, nx, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = &left * z * &right;
        let z = &left * z * &right;
        let norm = z.norm();
        if norm == 0.0 {
            continue;
        }
        let table = DMatrix::from_fn(ny, nx, |y, x| {
            let w = sx[x] * sy[y];
            w * w + eps * w * z[(y, x)] / norm
        });
        if table.iter().all(|p| *p >= 0.0) {
            return JointDist::new(table);
        }
    }
    Err(Error::InvalidEps {
        eps,
        reason: format!("no non-negative joint after {GEN_MAX_RETRIES} draws"),
    })
}

/// Symmetric Dirichlet draw via normalized Gamma variates.
pub fn dirichlet_marginal<R: Rng + ?Sized>(
    n: usize,
    concentration: f64,
    rng: &mut R,
) -> Result<FiniteDist> {
    let g = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::InvalidInput(format!("gamma law: {e}")))?;
    let w: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
    FiniteDist::from_weights(&w)
}

/// n i.i.d. (x, y) draws from a joint.
pub fn sample_joint<R: Rng + ?Sized>(
    j: &JointDist,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let ny = j.ny();
    let flat: Vec<f64> = (0..j.nx())
        .flat_map(|x| (0..ny).map(move |y| (x, y)))
        .map(|(x, y)| j.p(x, y))
        .collect();
    let idx = WeightedIndex::new(&flat)
        .map_err(|e| Error::InvalidDistribution(format!("sampling weights: {e}")))?;
    Ok((0..n)
        .map(|_| {
            let i = idx.sample(rng);
            (i / ny, i % ny)
        })
        .collect())
}
