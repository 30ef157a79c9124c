use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("symbol {index} out of range for alphabet of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("reference distribution has zero mass at symbol {index}")]
    SingularReference { index: usize },

    #[error("divergence is infinite: P has mass at symbol {index} where Q has none")]
    InfiniteDivergence { index: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("k = {k} out of range, expected 1 <= k <= {max}")]
    InvalidK { k: usize, max: usize },

    #[error("information vector is not orthogonal to sqrt(P): inner product {inner:e}")]
    InvalidInfoVector { inner: f64 },

    #[error("covariance is singular (eigenvalues in [{min_eig:e}, {max_eig:e}]) and pseudo-inverse was not allowed")]
    SingularCovariance { min_eig: f64, max_eig: f64 },

    #[error("invalid epsilon {eps}: {reason}")]
    InvalidEps { eps: f64, reason: String },

    #[error("rotation is not orthogonal or does not fix sqrt(P_Y): residual {residual:e}")]
    InvalidRotation { residual: f64 },

    #[error(
        "feature set is not normalized (zero-mean, identity covariance): residual {residual:e}"
    )]
    FeaturesNotNormalized { residual: f64 },

    #[error("activation derivative vanishes or is not finite at hidden node {index}")]
    InvalidActivationPoint { index: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
