//! Command-line front end: simulate a netlist, compare solvers against a
//! fine-step reference, and generate stiff RC mesh benchmarks.

pub mod commands;
pub mod csvio;
pub mod mesh;

pub use commands::{compare, genmesh, simulate, CompareReport, CompareRow, GenmeshOutcome, RunManifest};
pub use csvio::{read_csv, write_csv, WaveformTable};
pub use mesh::{generate_mesh, measure_stiffness, MeshSpec};

use ktran::decomp::DecompError;
use ktran::netlist::NetlistError;
use ktran::stepper::StepperError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    /// 1 for unusable input, 2 for numerical failure, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Invalid(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    /// Malformed netlists are parse errors; an unsolvable circuit is numerical.
    pub fn from_netlist(e: NetlistError) -> Self {
        match e {
            NetlistError::NoDcOperatingPoint(_) | NetlistError::Numeric(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<StepperError> for CliError {
    fn from(e: StepperError) -> Self {
        match e {
            StepperError::InvalidConfig(m) => CliError::Invalid(m),
            StepperError::Netlist(n) => CliError::from_netlist(n),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<DecompError> for CliError {
    fn from(e: DecompError) -> Self {
        match e {
            DecompError::Subtask { source, .. } => source.into(),
            other => CliError::Numeric(other.to_string()),
        }
    }
}
