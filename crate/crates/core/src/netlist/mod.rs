//! SPICE-subset netlists: parsing, source waveforms, MNA stamping and the DC
//! operating point.

mod parse;
mod stamp;
mod units;
mod waveform;

pub use parse::{parse_netlist, Element, ElementKind, ElementValue, Netlist, TranDirective};
pub use stamp::{dc_analysis, dc_analysis_at, dc_solve, stamp_mna, CircuitSystem, StampWarning};
pub use units::parse_value;
pub use waveform::{eval_sources, Pulse, Waveform, WaveformError};

use crate::numkit::NumError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetlistError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate element `{name}` (first defined on line {first_line})")]
    DuplicateElement {
        name: String,
        line: usize,
        first_line: usize,
    },
    #[error("line {line}: invalid node reference `{node}`")]
    InvalidNode { node: String, line: usize },
    #[error("netlist has no unknowns")]
    EmptyCircuit,
    #[error("no DC operating point: {0}")]
    NoDcOperatingPoint(NumError),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

/// Parse and stamp in one go.
pub fn load(text: &str) -> Result<(Netlist, CircuitSystem), NetlistError> {
    let nl = parse_netlist(text)?;
    let sys = stamp_mna(&nl)?;
    Ok((nl, sys))
}
