use thiserror::Error;

use gridforge_lmi::{LinalgError, ProgramError};

use crate::model::DguId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field} must be positive")]
    NonPositive { field: &'static str },
    #[error("{field} must be finite")]
    NonFinite { field: &'static str },
    #[error("DGU {0}: {1}")]
    InDgu(DguId, Box<ModelError>),
    #[error("duplicate DGU id {0}")]
    DuplicateDgu(DguId),
    #[error("unknown DGU id {0}")]
    UnknownDgu(DguId),
    #[error("line references missing DGU {0}")]
    DanglingLine(DguId),
    #[error("line connects DGU {0} to itself")]
    SelfLoop(DguId),
    #[error("more than one line between DGUs {0} and {1}")]
    DuplicateLine(DguId, DguId),
    #[error("line is not incident to DGU {0}")]
    ForeignLine(DguId),
    #[error("sigma_bar must be positive")]
    SigmaBar,
    #[error("cost weights must be positive")]
    Alphas,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("malformed LMI program: {0}")]
    Program(#[from] ProgramError),
    #[error("LMI solver failed numerically: {0}")]
    NumericalFailure(String),
    #[error("extracted controller failed verification: {0}")]
    Verification(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("controllers use different sigma_bar values ({0} and {1})")]
    MixedSigmaBar(f64, f64),
    #[error("no controller for DGU {0}")]
    MissingController(DguId),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("pair (A, B) is not controllable")]
    Uncontrollable,
    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),
    #[error("target set is not closed under conjugation")]
    NonConjugateTargets,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("no controller for DGU {0}")]
    MissingController(DguId),
    #[error("initial topology is not connected")]
    Disconnected,
    #[error("initial synthesis denied for DGU {0}: {1}")]
    InitialDenied(DguId, String),
    #[error("line {0}-{1} needs an inductance for the RL line model")]
    MissingLineInductance(DguId, DguId),
    #[error("closed-loop matrix is singular")]
    SingularSystem,
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("i/o: {0}")]
    Io(String),
}
