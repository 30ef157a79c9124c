//! Experiment configuration: defaults per experiment, a plain `key = value`
//! file, and command-line overrides on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    SoftmaxMatch,
    HiddenMatch,
    UfsMc,
    HscoreSuite,
}

impl ExperimentId {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::SoftmaxMatch => "softmax-match",
            ExperimentId::HiddenMatch => "hidden-match",
            ExperimentId::UfsMc => "ufs-mc",
            ExperimentId::HscoreSuite => "hscore-suite",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "softmax-match" => Ok(ExperimentId::SoftmaxMatch),
            "hidden-match" => Ok(ExperimentId::HiddenMatch),
            "ufs-mc" => Ok(ExperimentId::UfsMc),
            "hscore-suite" => Ok(ExperimentId::HscoreSuite),
            other => Err(Error::Parse(format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Marginals {
    Uniform,
    /// Symmetric Dirichlet with the given concentration.
    Dirichlet(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub nx: usize,
    pub ny: usize,
    pub k: usize,
    /// Width of the hidden-layer input t(x).
    pub m: usize,
    /// Dependence level of the generated joint (softmax/hidden match) or of
    /// the random configurations (ufs-mc).
    pub eps: f64,
    /// Dependence level of the joint that carries the features in ufs-mc.
    pub joint_eps: f64,
    pub n_samples: usize,
    pub n_trials: usize,
    /// Number of random instances in hscore-suite.
    pub n_instances: usize,
    pub seed: u64,
    pub marginals: Marginals,
    pub learning_rate: f64,
    pub epochs: usize,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentId) -> Self {
        let base = Self {
            experiment,
            nx: 8,
            ny: 6,
            k: 1,
            m: 4,
            eps: 1e-2,
            joint_eps: 0.3,
            n_samples: 100_000,
            n_trials: 20_000,
            n_instances: 200,
            seed: 2019,
            marginals: Marginals::Uniform,
            learning_rate: 4.0,
            epochs: 400_000,
            out: PathBuf::from("out"),
        };
        match experiment {
            ExperimentId::SoftmaxMatch => base,
            ExperimentId::HiddenMatch => Self { k: 3, ..base },
            ExperimentId::UfsMc => Self { k: 2, ..base },
            ExperimentId::HscoreSuite => Self { k: 2, ..base },
        }
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse::<T>()
                .map_err(|_| Error::Parse(format!("bad value `{v}` for `{key}`")))
        }
        let v = value.trim();
        match key.trim() {
            "experiment" => self.experiment = v.parse()?,
            "nx" => self.nx = num(key, v)?,
            "ny" => self.ny = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "m" => self.m = num(key, v)?,
            "eps" => self.eps = num(key, v)?,
            "joint_eps" => self.joint_eps = num(key, v)?,
            "n_samples" | "samples" => self.n_samples = num(key, v)?,
            "n_trials" | "trials" => self.n_trials = num(key, v)?,
            "n_instances" => self.n_instances = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "marginals" => {
                self.marginals = match v {
                    "uniform" => Marginals::Uniform,
                    "dirichlet" => Marginals::Dirichlet(5.0),
                    other => match other.strip_prefix("dirichlet:") {
                        Some(c) => Marginals::Dirichlet(num(key, c)?),
                        None => return Err(Error::Parse(format!("bad marginals `{other}`"))),
                    },
                }
            }
            other => return Err(Error::Parse(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Defaults for the experiment named in the file (or `fallback`), then
    /// the file's settings.
    pub fn from_file(path: &Path, fallback: ExperimentId) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut id = fallback;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() == "experiment" {
                    id = v.parse()?;
                }
            }
        }
        let mut cfg = Self::defaults(id);
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidInput(
                "alphabets need at least two symbols".into(),
            ));
        }
        let max_k = self.nx.min(self.ny) - 1;
        if self.k == 0 || self.k > max_k {
            return Err(Error::InvalidK {
                k: self.k,
                max: max_k,
            });
        }
        if self.n_samples == 0 || self.n_trials == 0 || self.n_instances == 0 || self.epochs == 0 {
            return Err(Error::InvalidInput("counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Directory for this experiment's files.
    pub fn experiment_dir(&self) -> PathBuf {
        self.out.join(self.experiment.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_experiment() {
        let s = ExperimentConfig::defaults(ExperimentId::SoftmaxMatch);
        assert_eq!((s.nx, s.ny, s.k, s.n_samples), (8, 6, 1, 100_000));
        let h = ExperimentConfig::defaults(ExperimentId::HiddenMatch);
        assert_eq!((h.k, h.m), (3, 4));
    }

    #[test]
    fn text_overrides() {
        let mut c = ExperimentConfig::defaults(ExperimentId::UfsMc);
        c.apply_text("# comment\n eps = 0.05\nseed=7 # trailing\nmarginals = dirichlet:2.5\n")
            .unwrap();
        assert_eq!(c.eps, 0.05);
        assert_eq!(c.seed, 7);
        assert_eq!(c.marginals, Marginals::Dirichlet(2.5));
        assert!(c.apply_text("bogus = 1").is_err());
        assert!(c.apply_text("k").is_err());
    }
}
