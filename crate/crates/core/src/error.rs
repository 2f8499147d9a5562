use thiserror::Error;

use crate::downstream::ProbeError;
use crate::dsp::DspError;
use crate::interpret::InterpretError;
use crate::io::{EdfError, StoreError};
use crate::model::ModelError;
use crate::training::TrainError;

/// Umbrella error for callers that chain several stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

pub type Result<T> = std::result::Result<T, Error>;
