//! ECG biometric identification with electrocardiomatrix (EKM) images.
//!
//! The pipeline reads WFDB or plain-text ECG records, detects R-peaks with
//! Pan-Tompkins, slices R-peak-aligned beats into EKM heatmaps, and trains a
//! small convolutional network to identify the subject behind each image.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod cnn;
pub mod config;
pub mod dataset;
pub mod ekm;
pub mod eval;
pub mod pipeline;
pub mod sigproc;
pub mod wfdb;

use std::path::PathBuf;

use thiserror::Error;

pub use cnn::CnnError;
pub use config::{ConfigError, RunConfig};
pub use dataset::DatasetError;
pub use ekm::EkmError;
pub use eval::EvalError;
pub use sigproc::SigprocError;
pub use wfdb::WfdbError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Wfdb(#[from] WfdbError),
    #[error(transparent)]
    Sigproc(#[from] SigprocError),
    #[error(transparent)]
    Ekm(#[from] EkmError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

impl Error {
    /// Process exit status: 2 for configuration errors, 4 for numeric
    /// divergence, 3 for everything data-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Ekm(EkmError::InvalidParams(_))
            | Error::Dataset(DatasetError::InvalidSplit(_) | DatasetError::InvalidSynthParams(_))
            | Error::Cnn(CnnError::InvalidConfig(_)) => EXIT_CONFIG,
            Error::Cnn(CnnError::DivergedLoss { .. }) => EXIT_DIVERGED,
            _ => EXIT_DATA,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::from(ConfigError::UnknownKey("x".into())).exit_code(), 2);
        assert_eq!(Error::from(EkmError::InvalidParams("a".into())).exit_code(), 2);
        assert_eq!(Error::from(DatasetError::EmptyManifest).exit_code(), 3);
        let d = CnnError::DivergedLoss { epoch: 1, step: 0, loss: f64::NAN };
        assert_eq!(Error::from(d).exit_code(), 4);
    }
}
