//! Config-driven experiment runs and their file outputs.

mod commands;
pub mod config;
pub mod output;

pub use commands::{
    cmd_forward, cmd_homogeneous, cmd_invert, cmd_sweep, load_reference, material_params, Artifacts,
};
pub use config::{ExperimentConfig, InversionMode, SweepParameter};
pub use output::{vtk_string, Metadata};

use crate::bayes::BayesError;
use crate::mesh::MeshError;
use crate::randomfield::RandomFieldError;
use crate::solver::{CurveParseError, SolverError};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("reference curve: {0}")]
    Reference(String),
    #[error("forward model: {0}")]
    Forward(String),
    #[error(transparent)]
    Curve(#[from] CurveParseError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    RandomField(#[from] RandomFieldError),
}

impl ExperimentError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// Stable identifier for machine-readable error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Reference(_) => "reference",
            Self::Forward(_) => "forward",
            Self::Curve(_) => "curve_parse",
            Self::Mesh(_) => "mesh",
            Self::Solver(_) => "solver",
            Self::Bayes(_) => "bayes",
            Self::RandomField(_) => "random_field",
        }
    }
}
