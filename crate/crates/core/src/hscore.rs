//! H-score feature metrics on labelled samples or on exact distribution
//! weights: the two-sided score H(s,v), the single-sided H(s), the
//! parameter-count correction, and the bound chain
//! H(s,v) ≤ H(s) ≤ ½Σσᵢ² ≤ k/2.
//!
//! All moments use the population (1/n) normalization.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, InversePolicy};
use crate::prob::JointDist;

pub const BOUND_TOL: f64 = 1e-9;

/// Feature rows with labels and normalized weights (1/n for samples, P(x,y)
/// for exact mode).
#[derive(Debug, Clone)]
pub struct Weighted<'a> {
    pub s: &'a DMatrix<f64>,
    pub labels: &'a [usize],
    pub ny: usize,
    weights: Vec<f64>,
}

impl<'a> Weighted<'a> {
    pub fn samples(s: &'a DMatrix<f64>, labels: &'a [usize], ny: usize) -> Result<Self> {
        let n = s.nrows();
        Self::with_weights(s, labels, ny, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn with_weights(
        s: &'a DMatrix<f64>,
        labels: &'a [usize],
        ny: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = s.nrows();
        if labels.len() != n || weights.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} feature rows, {} labels, {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= ny) {
            return Err(Error::IndexOutOfRange { index: y, len: ny });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidDistribution(
                "row weights must be non-negative and sum to 1".into(),
            ));
        }
        Ok(Self {
            s,
            labels,
            ny,
            weights,
        })
    }

    pub fn k(&self) -> usize {
        self.s.ncols()
    }

    fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.k());
        for (i, w) in self.weights.iter().enumerate() {
            m += self.s.row(i).transpose() * *w;
        }
        m
    }

    fn label_marginal(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.ny];
        for (y, w) in self.labels.iter().zip(&self.weights) {
            p[*y] += w;
        }
        p
    }

    /// Λ_s under the row weights.
    fn covariance(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.k(), self.k());
        for (i, w) in self.weights.iter().enumerate() {
            let d = self.s.row(i).transpose() - mu;
            c += &d * d.transpose() * *w;
        }
        c
    }

    /// E[s̃ | Y=y] for each class, |Y|×k; zero rows for empty classes.
    fn class_means(&self, mu: &DVector<f64>, py: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.ny, self.k());
        for (i, (&y, w)) in self.labels.iter().zip(&self.weights).enumerate() {
            let d = self.s.row(i) - mu.transpose();
            let mut r = m.row_mut(y);
            r += d * *w;
        }
        for y in 0..self.ny {
            if py[y] > 0.0 {
                m.row_mut(y).scale_mut(1.0 / py[y]);
            }
        }
        m
    }
}

/// Rows (s(x), y) weighted by P(x,y) for every cell with positive mass.
pub fn exact_rows(
    j: &JointDist,
    s_values: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<usize>, Vec<f64>)> {
    if s_values.nrows() != j.nx() {
        return Err(Error::DimensionMismatch(format!(
            "features over {} symbols, |X| = {}",
            s_values.nrows(),
            j.nx()
        )));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    for x in 0..j.nx() {
        for y in 0..j.ny() {
            let p = j.p(x, y);
            if p > 0.0 {
                rows.push(s_values.row(x).into_owned());
                labels.push(y);
                weights.push(p);
            }
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((DMatrix::from_rows(&rows), labels, weights))
}

/// H(s,v) = E[s̃(X)ᵀṽ(Y)] − ½tr(Λ_s Λ_ṽ), with `v` given per class (|Y|×k).
pub fn h_score_sv(data: &Weighted, v: &DMatrix<f64>) -> Result<f64> {
    if v.shape() != (data.ny, data.k()) {
        return Err(Error::DimensionMismatch(format!(
            "v must be {}x{}",
            data.ny,
            data.k()
        )));
    }
    let mu = data.mean();
    let py = data.label_marginal();
    let vbar = v.transpose() * DVector::from_vec(py.clone());
    let vt = DMatrix::from_fn(v.nrows(), v.ncols(), |y, j| v[(y, j)] - vbar[j]);
    let mut cross = 0.0;
    for (i, (&y, w)) in data.labels.iter().zip(&data.weights).enumerate() {
        let d = data.s.row(i).transpose() - &mu;
        cross += w * d.dot(&vt.row(y).transpose());
    }
    let lambda_s = data.covariance(&mu);
    let lambda_v = vt.transpose() * DMatrix::from_diagonal(&DVector::from_vec(py)) * &vt;
    Ok(cross - 0.5 * (lambda_s * lambda_v).trace())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingleHScore {
    pub value: f64,
    /// Only one label occurs, so there is nothing to discriminate.
    pub degenerate: bool,
    pub used_pseudo_inverse: bool,
}

/// H(s) = ½E_Y‖Λ_s^{-1/2}E[s̃(X) | Y]‖².
pub fn h_score_single(data: &Weighted) -> Result<SingleHScore> {
    let py = data.label_marginal();
    if py.iter().filter(|p| **p > 0.0).count() < 2 {
        return Ok(SingleHScore {
            value: 0.0,
            degenerate: true,
            used_pseudo_inverse: false,
        });
    }
    let mu = data.mean();
    let lambda = data.covariance(&mu);
    let root = linalg::sym_inv_sqrt(&lambda, InversePolicy::PseudoInverse)?;
    let cm = data.class_means(&mu, &py) * &root.matrix;
    let value = 0.5
        * (0..data.ny)
            .map(|y| py[y] * cm.row(y).norm_squared())
            .sum::<f64>();
    Ok(SingleHScore {
        value,
        degenerate: false,
        used_pseudo_inverse: root.used_pseudo_inverse,
    })
}

/// H − n_params/n_samples.
pub fn h_score_aic(h: f64, n_params: f64, n_samples: f64) -> Result<f64> {
    if !(n_samples > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sample count {n_samples} must be > 0"
        )));
    }
    Ok(h - n_params / n_samples)
}

#[derive(Debug, Clone, Serialize)]
pub struct HScoreReport {
    pub h_sv: Option<f64>,
    pub h_s: f64,
    pub h_aic: Option<f64>,
    pub k: usize,
    pub n_params: Option<f64>,
    pub n_samples: usize,
    /// ½Σ_{i≤k}σᵢ² of the joint, when it is known.
    pub bound: Option<f64>,
    pub degenerate: bool,
    pub used_pseudo_inverse: bool,
    pub checks: BoundChecks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundChecks {
    pub sv_le_s: Option<bool>,
    pub s_le_bound: Option<bool>,
    pub bound_le_half_k: Option<bool>,
    pub s_le_half_k: bool,
}

impl BoundChecks {
    pub fn all_pass(&self) -> bool {
        self.s_le_half_k
            && self.sv_le_s.unwrap_or(true)
            && self.s_le_bound.unwrap_or(true)
            && self.bound_le_half_k.unwrap_or(true)
    }
}

/// Optional extras for [`h_score_report`].
#[derive(Debug, Clone, Default)]
pub struct ReportExtras<'a> {
    pub v: Option<&'a DMatrix<f64>>,
    pub n_params: Option<f64>,
    /// Singular values of the joint's CDM, leading first.
    pub sigmas: Option<&'a [f64]>,
}

pub fn h_score_report(data: &Weighted, extras: &ReportExtras) -> Result<HScoreReport> {
    let single = h_score_single(data)?;
    let h_sv = extras.v.map(|v| h_score_sv(data, v)).transpose()?;
    let n = data.s.nrows();
    let h_aic = extras
        .n_params
        .map(|p| h_score_aic(single.value, p, n as f64))
        .transpose()?;
    let k = data.k();
    let bound = extras
        .sigmas
        .map(|s| 0.5 * s.iter().take(k).map(|x| x * x).sum::<f64>());
    let checks = BoundChecks {
        sv_le_s: h_sv.map(|h| h <= single.value + BOUND_TOL),
        s_le_bound: bound.map(|b| single.value <= b + BOUND_TOL),
        bound_le_half_k: bound.map(|b| b <= 0.5 * k as f64 + BOUND_TOL),
        s_le_half_k: single.value <= 0.5 * k as f64 + BOUND_TOL,
    };
    Ok(HScoreReport {
        h_sv,
        h_s: single.value,
        h_aic,
        k,
        n_params: extras.n_params,
        n_samples: n,
        bound,
        degenerate: single.degenerate,
        used_pseudo_inverse: single.used_pseudo_inverse,
        checks,
    })
}

/// Features with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

const DUMP_MAGIC: &[u8; 4] = b"UFSD";
const DUMP_VERSION: u32 = 1;

impl FeatureDump {
    /// Number of label classes implied by the largest label.
    pub fn ny(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// CSV with a header row; the column named `label` holds the labels and
    /// every other column is a feature.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let label_col = header
            .iter()
            .position(|h| h.trim() == "label")
            .ok_or_else(|| Error::Parse("no `label` column in header".into()))?;
        let k = header.len() - 1;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (i, field) in rec.iter().enumerate() {
                let field = field.trim();
                if i == label_col {
                    labels.push(field.parse::<usize>().map_err(|e| {
                        Error::Parse(format!("row {}: label `{field}`: {e}", line + 1))
                    })?);
                } else {
                    data.push(field.parse::<f64>().map_err(|e| {
                        Error::Parse(format!("row {}: value `{field}`: {e}", line + 1))
                    })?);
                }
            }
        }
        Ok(Self {
            features: DMatrix::from_row_slice(labels.len(), k, &data),
            labels,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.features.ncols())
            .map(|j| format!("f{j}"))
            .collect();
        header.push("label".into());
        out.write_record(&header)?;
        for (i, y) in self.labels.iter().enumerate() {
            let mut rec: Vec<String> = self
                .features
                .row(i)
                .iter()
                .map(|v| format!("{v:e}"))
                .collect();
            rec.push(y.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Little-endian binary: magic `UFSD`, u32 version, u64 rows, u32
    /// columns, row-major f64 features, then one u32 label per row.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.features.nrows() as u64).to_le_bytes())?;
        w.write_all(&(self.features.ncols() as u32).to_le_bytes())?;
        for i in 0..self.features.nrows() {
            for v in self.features.row(i).iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for &y in &self.labels {
            let y = u32::try_from(y)
                .map_err(|_| Error::InvalidInput(format!("label {y} exceeds u32")))?;
            w.write_all(&y.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Parse("not a feature dump (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != DUMP_VERSION {
            return Err(Error::Parse(format!("unsupported dump version {version}")));
        }
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4)?;
        let k = u32::from_le_bytes(b4) as usize;
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n * k {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            labels.push(u32::from_le_bytes(b4) as usize);
        }
        Ok(Self {
            features: DMatrix::from_row_slice(n, k, &data),
            labels,
        })
    }

    /// Reads `.csv` files as CSV and anything else as the binary format.
    pub fn read_path(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::read_csv(f),
            _ => Self::read_binary(f),
        }
    }
}
