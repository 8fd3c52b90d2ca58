use nalgebra::DMatrix;

use crate::error::ProgramError;

const SYMMETRY_TOL: f64 = 1e-12;

/// Orientation of a matrix inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `F(x) ⪰ 0`
    Psd,
    /// `F(x) ⪯ 0`
    Nsd,
}

impl Sense {
    pub fn sign(self) -> f64 {
        match self {
            Sense::Psd => 1.0,
            Sense::Nsd => -1.0,
        }
    }
}

/// Affine symmetric matrix inequality `F(x) = F0 + Σ x_j F_j` in the given sense.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub label: String,
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
    pub sense: Sense,
    /// Strict blocks are enforced with the solver's `epsilon_strict` margin.
    pub strict: bool,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (coeff, &xj) in self.coeffs.iter().zip(x) {
            if xj != 0.0 {
                m += coeff * xj;
            }
        }
        m
    }

    /// `F(x)` for PSD blocks and `−F(x)` for NSD blocks, so feasibility reads as `slack ⪰ 0`.
    pub fn slack(&self, x: &[f64]) -> DMatrix<f64> {
        self.evaluate(x) * self.sense.sign()
    }
}

/// `Σ coeffs_j x_j = rhs`.
#[derive(Debug, Clone)]
pub struct LinearEquality {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

/// Minimize `objective · x` subject to every block and equality.
#[derive(Debug, Clone)]
pub struct LmiProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub blocks: Vec<LmiBlock>,
    pub equalities: Vec<LinearEquality>,
}

impl LmiProgram {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, objective: vec![0.0; num_vars], blocks: Vec::new(), equalities: Vec::new() }
    }

    pub fn with_objective(mut self, objective: Vec<f64>) -> Self {
        self.objective = objective;
        self
    }

    pub fn push_block(&mut self, block: LmiBlock) {
        self.blocks.push(block);
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.objective.len() != self.num_vars {
            return Err(ProgramError::ObjectiveLength { expected: self.num_vars, found: self.objective.len() });
        }
        for block in &self.blocks {
            let label = || block.label.clone();
            if block.coeffs.len() != self.num_vars {
                return Err(ProgramError::CoeffCount {
                    block: label(),
                    expected: self.num_vars,
                    found: block.coeffs.len(),
                });
            }
            let n = block.constant.nrows();
            for m in std::iter::once(&block.constant).chain(&block.coeffs) {
                if m.nrows() != n || m.ncols() != n {
                    return Err(ProgramError::Dimension { block: label() });
                }
                if !m.iter().all(|v| v.is_finite()) {
                    return Err(ProgramError::NonFinite { block: label() });
                }
                let scale = m.amax().max(f64::MIN_POSITIVE);
                if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
                    return Err(ProgramError::Asymmetric { block: label() });
                }
            }
        }
        for (index, eq) in self.equalities.iter().enumerate() {
            if eq.coeffs.len() != self.num_vars {
                return Err(ProgramError::EqualityLength { index, expected: self.num_vars, found: eq.coeffs.len() });
            }
        }
        Ok(())
    }
}
