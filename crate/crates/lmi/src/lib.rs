//! Dense linear-matrix-inequality programs: construction, a primal log-det barrier solver and
//! the eigenvalue routines used to verify its output.

pub mod affine;
pub mod error;
pub mod linalg;
mod preprocess;
pub mod program;
pub mod solver;

pub use affine::AffineMatrix;
pub use error::{LinalgError, ProgramError};
pub use linalg::{general_eig, sym_eig, SymEig};
pub use program::{LinearEquality, LmiBlock, LmiProgram, Sense};
pub use solver::{solve, IterationRecord, LmiSolution, Phase, SolveStatus, SolverOptions};
