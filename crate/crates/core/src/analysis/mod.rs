//! Theorem checks, oracle metrics and the ablation harness.

mod eval;
mod experiment;
mod theorem;

pub use eval::*;
pub use experiment::*;
pub use theorem::*;

use thiserror::Error;

use crate::backbone::ModelError;
use crate::inference::GenError;
use crate::synthdata::DataError;
use crate::trainer::TrainError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("i/o: {0}")]
    Io(String),
}
