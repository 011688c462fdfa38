use std::path::Path;

use lrsim_core::CoreError;
use lrsim_data::DataError;
use lrsim_nn::{ContainerError, NnError};
use lrsim_sim::SimError;
use lrsim_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Environment(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit status by failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Usage = 2,
    Environment = 3,
    Numeric = 4,
}

impl CliError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.display().to_string(), source }
    }

    pub fn status(&self) -> ExitStatus {
        match self {
            CliError::Usage(_) => ExitStatus::Usage,
            CliError::Environment(_) | CliError::Io { .. } | CliError::Csv(_) => ExitStatus::Environment,
            CliError::Numeric(_) => ExitStatus::Numeric,
            CliError::Core(e) => core_status(e),
            CliError::Data(e) => data_status(e),
            CliError::Sim(e) => sim_status(e),
            CliError::Container(e) => container_status(e),
        }
    }
}

fn container_status(e: &ContainerError) -> ExitStatus {
    match e {
        ContainerError::Io { .. } => ExitStatus::Environment,
        ContainerError::Format(_) | ContainerError::Integrity(_) => ExitStatus::Usage,
    }
}

fn tensor_status(e: &TensorError) -> ExitStatus {
    match e {
        TensorError::Domain(_) => ExitStatus::Numeric,
        TensorError::Shape(_) | TensorError::Contract(_) => ExitStatus::Usage,
    }
}

fn nn_status(e: &NnError) -> ExitStatus {
    match e {
        NnError::Tensor(t) => tensor_status(t),
        NnError::Container(c) => container_status(c),
        NnError::Config(_) | NnError::Missing(_) => ExitStatus::Usage,
    }
}

fn data_status(e: &DataError) -> ExitStatus {
    match e {
        DataError::Io { .. } => ExitStatus::Environment,
        DataError::Container(c) => container_status(c),
        DataError::Config(_) | DataError::Shape(_) | DataError::Contract(_) | DataError::Input(_) => ExitStatus::Usage,
    }
}

fn core_status(e: &CoreError) -> ExitStatus {
    match e {
        CoreError::Tensor(t) => tensor_status(t),
        CoreError::Nn(n) => nn_status(n),
        CoreError::Data(d) => data_status(d),
        CoreError::Container(c) => container_status(c),
        CoreError::Config(_) => ExitStatus::Usage,
        CoreError::NonFinite(_) => ExitStatus::Numeric,
        CoreError::Io { .. } | CoreError::Csv(_) => ExitStatus::Environment,
    }
}

fn sim_status(e: &SimError) -> ExitStatus {
    match e {
        SimError::Core(c) => core_status(c),
        SimError::Data(d) => data_status(d),
        SimError::Nn(n) => nn_status(n),
        SimError::Container(c) => container_status(c),
        SimError::Tensor(t) => tensor_status(t),
        SimError::Config(_) | SimError::Input(_) => ExitStatus::Usage,
        SimError::NonFinite(_) | SimError::SessionFailed => ExitStatus::Numeric,
        SimError::Io { .. } | SimError::Csv(_) => ExitStatus::Environment,
    }
}
