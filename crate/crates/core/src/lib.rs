//! Universal feature selection on finite alphabets.

pub mod cdm;
pub mod error;
pub mod geom;
pub mod harness;
pub mod hscore;
pub mod jacobi;
pub mod linalg;
pub mod nn;
pub mod prob;
pub mod projection;
pub mod ufs;

pub use error::{Error, Result};
