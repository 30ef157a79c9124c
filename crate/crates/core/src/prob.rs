//! Finite-alphabet probability primitives.
//!
//! Distributions are validated at construction (non-negative, summing to one
//! within [`NORM_TOL`]) and never silently renormalized. Joint tables are
//! stored as |Y|×|X| matrices, row `y`, column `x`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on Σp = 1.
pub const NORM_TOL: f64 = 1e-12;

/// A probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FiniteDist {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for FiniteDist {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        FiniteDist::new(v)
    }
}

impl From<FiniteDist> for Vec<f64> {
    fn from(d: FiniteDist) -> Self {
        d.probs
    }
}

impl FiniteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty alphabet".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {} (must be finite and non-negative)",
                probs[i]
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum:.17} (tolerance {NORM_TOL:e})"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Normalize non-negative weights. This is the one explicit place where
    /// renormalization happens; constructors never do it implicitly.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be non-negative with positive sum".into(),
            ));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    /// Add `delta` to every entry and renormalize, so a distribution with
    /// zeros can serve as a reference.
    pub fn smoothed(&self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) {
            return Err(Error::InvalidInput(format!("smoothing delta {delta} < 0")));
        }
        let w: Vec<f64> = self.probs.iter().map(|p| p + delta).collect();
        Self::from_weights(&w)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|p| *p > 0.0)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.probs)
    }

    /// Entrywise square root as a vector; a unit vector in ℝⁿ.
    pub fn sqrt_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.probs.iter().map(|p| p.sqrt()))
    }

    /// Expectation of `f` under this distribution.
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.probs.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    pub(crate) fn require_strictly_positive(&self) -> Result<()> {
        match self.probs.iter().position(|p| *p <= 0.0) {
            Some(index) => Err(Error::SingularReference { index }),
            None => Ok(()),
        }
    }

    fn require_same_len(&self, other: &FiniteDist) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch(format!(
                "alphabet sizes {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

/// A joint distribution P_XY stored as a |Y|×|X| table with cached marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct JointDist {
    table: DMatrix<f64>,
    px: FiniteDist,
    py: FiniteDist,
}

impl TryFrom<Vec<Vec<f64>>> for JointDist {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        JointDist::new(linalg::from_rows(&rows)?)
    }
}

impl From<JointDist> for Vec<Vec<f64>> {
    fn from(j: JointDist) -> Self {
        linalg::to_rows(&j.table)
    }
}

impl JointDist {
    /// `table[(y, x)] = P_XY(x, y)`.
    pub fn new(table: DMatrix<f64>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::InvalidDistribution("empty joint table".into()));
        }
        if table.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(
                "joint entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = table.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "joint sums to {sum:.17}"
            )));
        }
        let px: Vec<f64> = (0..table.ncols()).map(|x| table.column(x).sum()).collect();
        let py: Vec<f64> = (0..table.nrows()).map(|y| table.row(y).sum()).collect();
        Ok(Self {
            px: FiniteDist::new(px)?,
            py: FiniteDist::new(py)?,
            table,
        })
    }

    pub fn product(px: &FiniteDist, py: &FiniteDist) -> Self {
        let table = DMatrix::from_fn(py.len(), px.len(), |y, x| px.get(x) * py.get(y));
        Self {
            table,
            px: px.clone(),
            py: py.clone(),
        }
    }

    pub fn nx(&self) -> usize {
        self.table.ncols()
    }

    pub fn ny(&self) -> usize {
        self.table.nrows()
    }

    /// P_XY(x, y).
    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.table[(y, x)]
    }

    pub fn table(&self) -> &DMatrix<f64> {
        &self.table
    }

    pub fn px(&self) -> &FiniteDist {
        &self.px
    }

    pub fn py(&self) -> &FiniteDist {
        &self.py
    }

    /// P_{Y|X}(y|x) as a |Y|×|X| matrix (columns sum to one).
    pub fn y_given_x(&self) -> Result<DMatrix<f64>> {
        self.px.require_strictly_positive()?;
        Ok(DMatrix::from_fn(self.ny(), self.nx(), |y, x| {
            self.table[(y, x)] / self.px.get(x)
        }))
    }

    /// P_{X|Y}(x|y) as a |Y|×|X| matrix (rows sum to one).
    pub fn x_given_y(&self) -> Result<DMatrix<f64>> {
        self.py.require_strictly_positive()?;
        Ok(DMatrix::from_fn(self.ny(), self.nx(), |y, x| {
            self.table[(y, x)] / self.py.get(y)
        }))
    }

    /// The joint flattened as a distribution over |X|·|Y| cells (row-major).
    pub fn flatten(&self) -> FiniteDist {
        let v: Vec<f64> = (0..self.ny())
            .flat_map(|y| (0..self.nx()).map(move |x| (y, x)))
            .map(|(y, x)| self.table[(y, x)])
            .collect();
        FiniteDist { probs: v }
    }

    /// Conditional entropy H(Y|X) in nats.
    pub fn conditional_entropy_y_given_x(&self) -> f64 {
        let mut h = 0.0;
        for x in 0..self.nx() {
            let px = self.px.get(x);
            for y in 0..self.ny() {
                let p = self.table[(y, x)];
                if p > 0.0 {
                    h -= p * (p / px).ln();
                }
            }
        }
        h
    }
}

/// Joint empirical distribution of labelled samples `(x, y)`.
pub fn empirical_joint(samples: &[(usize, usize)], nx: usize, ny: usize) -> Result<JointDist> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty sample list".into()));
    }
    let mut counts = DMatrix::<u64>::zeros(ny, nx);
    for &(x, y) in samples {
        if x >= nx {
            return Err(Error::IndexOutOfRange { index: x, len: nx });
        }
        if y >= ny {
            return Err(Error::IndexOutOfRange { index: y, len: ny });
        }
        counts[(y, x)] += 1;
    }
    let n = samples.len() as f64;
    let table = counts.map(|c| c as f64 / n);
    // Marginals from integer counts so they are exact empirical frequencies.
    let px: Vec<f64> = (0..nx)
        .map(|x| counts.column(x).iter().sum::<u64>() as f64 / n)
        .collect();
    let py: Vec<f64> = (0..ny)
        .map(|y| counts.row(y).iter().sum::<u64>() as f64 / n)
        .collect();
    let sum: f64 = table.iter().sum();
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidDistribution(format!(
            "empirical joint sums to {sum}"
        )));
    }
    Ok(JointDist {
        table,
        px: FiniteDist::new(px)?,
        py: FiniteDist::new(py)?,
    })
}

/// Local coordinates of a distribution around a strictly positive reference:
/// φ(x) = (P(x) − P_ref(x)) / √P_ref(x).
#[derive(Debug, Clone, PartialEq)]
pub struct InfoVector {
    reference: FiniteDist,
    phi: DVector<f64>,
}

impl InfoVector {
    /// Wrap raw coordinates. The reference must be strictly positive.
    pub fn from_phi(phi: DVector<f64>, reference: FiniteDist) -> Result<Self> {
        reference.require_strictly_positive()?;
        if phi.len() != reference.len() {
            return Err(Error::DimensionMismatch(format!(
                "phi has {} entries, reference has {}",
                phi.len(),
                reference.len()
            )));
        }
        Ok(Self { reference, phi })
    }

    pub fn zero(reference: FiniteDist) -> Result<Self> {
        let n = reference.len();
        Self::from_phi(DVector::zeros(n), reference)
    }

    pub fn phi(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn reference(&self) -> &FiniteDist {
        &self.reference
    }

    pub fn norm_squared(&self) -> f64 {
        self.phi.norm_squared()
    }

    /// ⟨√P_ref, φ⟩; zero for vectors built from a valid distribution.
    pub fn mass_defect(&self) -> f64 {
        self.reference.sqrt_vector().dot(&self.phi)
    }

    /// L(x) = φ(x)/√P_ref(x).
    pub fn feature_function(&self) -> FeatureFn {
        let values = self
            .phi
            .iter()
            .zip(self.reference.probs())
            .map(|(f, p)| f / p.sqrt())
            .collect();
        FeatureFn {
            values,
            reference: self.reference.clone(),
        }
    }

    /// The distribution P = P_ref + √P_ref ⊙ φ, if it is valid.
    pub fn to_dist(&self) -> Result<FiniteDist> {
        let p: Vec<f64> = self
            .reference
            .probs()
            .iter()
            .zip(self.phi.iter())
            .map(|(r, f)| r + r.sqrt() * f)
            .collect();
        FiniteDist::new(p)
    }
}

/// A real function on the alphabet together with the distribution used to
/// take its moments.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFn {
    pub values: Vec<f64>,
    pub reference: FiniteDist,
}

impl FeatureFn {
    pub fn mean(&self) -> f64 {
        self.reference.expect(&self.values)
    }

    pub fn is_zero_mean(&self, tol: f64) -> bool {
        self.mean().abs() <= tol
    }
}

/// Information vector of `p` with respect to `reference`.
pub fn info_vector(p: &FiniteDist, reference: &FiniteDist) -> Result<InfoVector> {
    p.require_same_len(reference)?;
    reference.require_strictly_positive()?;
    let phi = DVector::from_iterator(
        p.len(),
        p.probs()
            .iter()
            .zip(reference.probs())
            .map(|(a, r)| (a - r) / r.sqrt()),
    );
    Ok(InfoVector {
        reference: reference.clone(),
        phi,
    })
}

/// χ²(P‖P_ref) = Σ (P − P_ref)² / P_ref.
pub fn chi_sq(p: &FiniteDist, reference: &FiniteDist) -> Result<f64> {
    p.require_same_len(reference)?;
    reference.require_strictly_positive()?;
    Ok(p.probs()
        .iter()
        .zip(reference.probs())
        .map(|(a, r)| (a - r) * (a - r) / r)
        .sum())
}

/// Whether `p` lies in the χ² ball of radius ε around `reference`.
pub fn is_in_eps_neighborhood(p: &FiniteDist, reference: &FiniteDist, eps: f64) -> Result<bool> {
    Ok(chi_sq(p, reference)? <= eps * eps)
}

/// χ² of the joint against the product of its own marginals.
pub fn dependence_chi_sq(j: &JointDist) -> Result<f64> {
    let product = JointDist::product(j.px(), j.py());
    let pf = product.flatten();
    pf.require_strictly_positive().map_err(|_| {
        // report the offending marginal symbol rather than the flattened cell
        let bad_x = j.px().probs().iter().position(|p| *p <= 0.0);
        let bad_y = j.py().probs().iter().position(|p| *p <= 0.0);
        Error::SingularReference {
            index: bad_x.or(bad_y).unwrap_or(0),
        }
    })?;
    chi_sq(&j.flatten(), &pf)
}

pub fn is_eps_dependent(j: &JointDist, eps: f64) -> Result<bool> {
    Ok(dependence_chi_sq(j)? <= eps * eps)
}

/// D(P‖Q) in nats.
pub fn kl(p: &FiniteDist, q: &FiniteDist) -> Result<f64> {
    p.require_same_len(q)?;
    let mut d = 0.0;
    for (i, (&a, &b)) in p.probs().iter().zip(q.probs()).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::InfiniteDivergence { index: i });
            }
            d += a * (a / b).ln();
        }
    }
    Ok(d)
}

/// ½‖φ₁ − φ₂‖², the second-order approximation of D(P₁‖P₂).
pub fn local_kl_approx(phi1: &InfoVector, phi2: &InfoVector) -> Result<f64> {
    if phi1.phi.len() != phi2.phi.len() {
        return Err(Error::DimensionMismatch(
            "information vector lengths differ".into(),
        ));
    }
    Ok(0.5 * (&phi1.phi - &phi2.phi).norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(v: &[f64]) -> FiniteDist {
        FiniteDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(FiniteDist::new(vec![0.5, 0.6]).is_err());
        assert!(FiniteDist::new(vec![-0.1, 1.1]).is_err());
        assert!(FiniteDist::new(vec![]).is_err());
        assert!(FiniteDist::new(vec![f64::NAN, 1.0]).is_err());
        assert!(d(&[0.0, 1.0]).is_strictly_positive() == false);
    }

    #[test]
    fn empirical_joint_counts() {
        let j = empirical_joint(&[(0, 0), (1, 1)], 2, 2).unwrap();
        assert_eq!(
            j.table(),
            &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5])
        );
        let j = empirical_joint(&vec![(0, 0); 17], 2, 3).unwrap();
        assert_eq!(j.p(0, 0), 1.0);
        assert_eq!(j.table().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn empirical_joint_errors() {
        assert!(matches!(
            empirical_joint(&[(2, 0)], 2, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert!(matches!(
            empirical_joint(&[(0, 5)], 2, 2),
            Err(Error::IndexOutOfRange { index: 5, len: 2 })
        ));
        assert!(matches!(
            empirical_joint(&[], 2, 2),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn info_vector_hand_case() {
        let r = FiniteDist::uniform(2);
        let phi = info_vector(&d(&[0.6, 0.4]), &r).unwrap();
        let s2 = 2f64.sqrt();
        assert_abs_diff_eq!(phi.phi()[0], 0.1 * s2, epsilon = 1e-15);
        assert_abs_diff_eq!(phi.phi()[1], -0.1 * s2, epsilon = 1e-15);
        // each symbol contributes 0.1²/0.5 = 0.02, so χ² = ‖φ‖² = 0.04
        assert_abs_diff_eq!(chi_sq(&d(&[0.6, 0.4]), &r).unwrap(), 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(phi.norm_squared(), 0.04, epsilon = 1e-15);
        // P = ref
        let z = info_vector(&r, &r).unwrap();
        assert_eq!(z.norm_squared(), 0.0);
        assert!(is_in_eps_neighborhood(&r, &r, 1e-300).unwrap());
    }

    #[test]
    fn singular_reference_is_an_error() {
        let r = d(&[0.0, 1.0]);
        assert!(matches!(
            info_vector(&d(&[0.5, 0.5]), &r),
            Err(Error::SingularReference { index: 0 })
        ));
        assert!(matches!(
            chi_sq(&d(&[0.5, 0.5]), &r),
            Err(Error::SingularReference { .. })
        ));
        let sm = r.smoothed(0.01).unwrap();
        assert!(sm.is_strictly_positive());
        assert_abs_diff_eq!(sm.get(0), 0.01 / 1.02, epsilon = 1e-15);
    }

    #[test]
    fn eps_dependence_two_by_two() {
        let j = JointDist::new(DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.2, 0.3])).unwrap();
        // oracle: direct χ² summation against the uniform product
        let oracle: f64 = [0.3, 0.2, 0.2, 0.3]
            .iter()
            .map(|p| (p - 0.25) * (p - 0.25) / 0.25)
            .sum();
        assert_abs_diff_eq!(oracle, 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(dependence_chi_sq(&j).unwrap(), oracle, epsilon = 1e-15);
        assert!(is_eps_dependent(&j, 0.2 + 1e-12).unwrap());
        assert!(!is_eps_dependent(&j, 0.19).unwrap());
        let prod = JointDist::product(&d(&[0.2, 0.8]), &d(&[0.1, 0.3, 0.6]));
        assert!(is_eps_dependent(&prod, 1e-300).unwrap());
    }

    #[test]
    fn kl_closed_form_and_support() {
        let p = FiniteDist::uniform(2);
        let q = d(&[0.6, 0.4]);
        let expect = 0.5 * (5.0f64 / 6.0).ln() + 0.5 * (5.0f64 / 4.0).ln();
        assert_abs_diff_eq!(kl(&p, &q).unwrap(), expect, epsilon = 1e-15);
        assert_eq!(kl(&q, &q).unwrap(), 0.0);
        assert!(matches!(
            kl(&p, &d(&[1.0, 0.0])),
            Err(Error::InfiniteDivergence { index: 1 })
        ));
        // zero mass in P where Q is zero is fine
        assert_eq!(kl(&d(&[1.0, 0.0]), &d(&[1.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn local_kl_error_shrinks_cubically() {
        let r = d(&[0.2, 0.3, 0.5]);
        let dir1 = [0.7, -0.2, -0.5];
        let dir2 = [-0.3, 0.6, -0.3];
        let mut ratios = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            let mk = |dir: [f64; 3]| {
                let sr = r.sqrt_vector();
                // remove the √r component so the perturbation keeps mass one
                let v = DVector::from_column_slice(&dir);
                let v = &v - &sr * sr.dot(&v);
                let v = &v / v.norm() * eps;
                let p: Vec<f64> = (0..3).map(|i| r.get(i) + sr[i] * v[i]).collect();
                FiniteDist::from_weights(&p).unwrap()
            };
            let p1 = mk(dir1);
            let p2 = mk(dir2);
            let exact = kl(&p1, &p2).unwrap();
            let local = local_kl_approx(
                &info_vector(&p1, &r).unwrap(),
                &info_vector(&p2, &r).unwrap(),
            )
            .unwrap();
            if eps == 1e-2 {
                assert!((exact - local).abs() <= 10.0 * eps * eps * eps);
            }
            ratios.push((exact - local).abs() / (eps * eps));
        }
        assert!(ratios[0] > ratios[1] && ratios[1] > ratios[2]);
        assert!(ratios[2] < 1e-2);
    }

    #[test]
    fn joint_json_is_row_major() {
        let j = JointDist::new(DMatrix::from_row_slice(
            2,
            3,
            &[0.1, 0.2, 0.1, 0.2, 0.3, 0.1],
        ))
        .unwrap();
        let s = serde_json::to_string(&j).unwrap();
        assert_eq!(s, "[[0.1,0.2,0.1],[0.2,0.3,0.1]]");
        let back: JointDist = serde_json::from_str(&s).unwrap();
        assert_eq!(back, j);
        let bad: std::result::Result<JointDist, _> = serde_json::from_str("[[0.5,0.6]]");
        assert!(bad.is_err());
        let fd: FiniteDist = serde_json::from_str("[0.25,0.75]").unwrap();
        assert_eq!(fd.probs(), &[0.25, 0.75]);
    }
}
