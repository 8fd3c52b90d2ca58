//! Reduces an [`LmiProgram`] to an equality-free program over an affine parametrization
//! `x = x0 + N z` whose blocks have nonempty interiors.
//!
//! A semidefinite block whose diagonal entry is identically zero forces the rest of that
//! row to vanish. Those implied equalities are added to the explicit ones, the row is dropped,
//! and the process repeats until nothing changes.

use nalgebra::{DMatrix, DVector};

use crate::program::{LinearEquality, LmiProgram};

const STRUCTURAL_ZERO: f64 = 1e-13;
const PIVOT_TOL: f64 = 1e-12;

/// A block of the reduced problem: `S(z) = constant + Σ z_k coeffs[k] ⪰ 0`.
#[derive(Debug, Clone)]
pub(crate) struct ReducedBlock {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct ReducedProblem {
    pub x0: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub objective: DVector<f64>,
    pub blocks: Vec<ReducedBlock>,
}

impl ReducedProblem {
    pub fn num_free(&self) -> usize {
        self.basis.ncols()
    }

    pub fn lift(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.x0 + &self.basis * z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Reduction {
    Reduced,
    /// Equalities (explicit or implied) are inconsistent, or a strict block has a forced zero.
    StructurallyInfeasible(String),
}

/// Affine solution set of a linear system, parametrized by its free variables.
struct AffineSolution {
    x0: DVector<f64>,
    basis: DMatrix<f64>,
}

/// Row-reduces the system with complete pivoting. Free variables map to themselves, so the
/// parametrization keeps the scale of every surviving variable.
fn solve_equalities(n: usize, eqs: &[LinearEquality]) -> Result<AffineSolution, String> {
    let m = eqs.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (r, eq) in eqs.iter().enumerate() {
        let scale = eq.coeffs.iter().fold(eq.rhs.abs(), |acc, v| acc.max(v.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        for (c, v) in eq.coeffs.iter().enumerate() {
            a[(r, c)] = v / scale;
        }
        b[r] = eq.rhs / scale;
    }
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut used_rows = vec![false; m];
    let mut used_cols = vec![false; n];
    loop {
        let mut best = (0.0, 0, 0);
        for r in (0..m).filter(|&r| !used_rows[r]) {
            for c in (0..n).filter(|&c| !used_cols[c]) {
                if a[(r, c)].abs() > best.0 {
                    best = (a[(r, c)].abs(), r, c);
                }
            }
        }
        let (mag, pr, pc) = best;
        if mag <= PIVOT_TOL {
            break;
        }
        let pv = a[(pr, pc)];
        for c in 0..n {
            a[(pr, c)] /= pv;
        }
        b[pr] /= pv;
        for r in 0..m {
            if r != pr && a[(r, pc)] != 0.0 {
                let f = a[(r, pc)];
                for c in 0..n {
                    a[(r, c)] -= f * a[(pr, c)];
                }
                a[(r, pc)] = 0.0;
                b[r] -= f * b[pr];
            }
        }
        used_rows[pr] = true;
        used_cols[pc] = true;
        pivots.push((pr, pc));
    }
    for r in (0..m).filter(|&r| !used_rows[r]) {
        if b[r].abs() > 1e-9 {
            return Err(format!("equality constraints are inconsistent (residual {:.3e})", b[r]));
        }
    }
    let free: Vec<usize> = (0..n).filter(|&c| !used_cols[c]).collect();
    let mut x0 = DVector::zeros(n);
    let mut basis = DMatrix::zeros(n, free.len());
    for &(r, c) in &pivots {
        x0[c] = b[r];
        for (k, &f) in free.iter().enumerate() {
            basis[(c, k)] = -a[(r, f)];
        }
    }
    for (k, &f) in free.iter().enumerate() {
        basis[(f, k)] = 1.0;
    }
    Ok(AffineSolution { x0, basis })
}

fn restrict(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| m[(rows[i], rows[j])])
}

/// Builds the reduced problem. Strict blocks are shifted by `epsilon_strict` before reduction.
pub(crate) fn reduce(program: &LmiProgram, epsilon_strict: f64) -> (Option<ReducedProblem>, Reduction) {
    let n = program.num_vars;
    let mut equalities = program.equalities.clone();
    let mut active: Vec<Vec<usize>> = program.blocks.iter().map(|b| (0..b.dim()).collect()).collect();

    let solution = loop {
        let sol = match solve_equalities(n, &equalities) {
            Ok(s) => s,
            Err(msg) => return (None, Reduction::StructurallyInfeasible(msg)),
        };
        let mut changed = false;
        for (bi, block) in program.blocks.iter().enumerate() {
            let sign = block.sense.sign();
            let constant = block.evaluate(sol.x0.as_slice()) * sign;
            let coeffs: Vec<DMatrix<f64>> = (0..sol.basis.ncols())
                .map(|k| {
                    let mut m = DMatrix::zeros(block.dim(), block.dim());
                    for (j, cj) in block.coeffs.iter().enumerate() {
                        let w = sol.basis[(j, k)];
                        if w != 0.0 {
                            m += cj * (w * sign);
                        }
                    }
                    m
                })
                .collect();
            let c_norm = constant.norm();
            let coeff_norms: Vec<f64> = coeffs.iter().map(|m| m.norm()).collect();
            let forced: Vec<usize> = active[bi]
                .iter()
                .copied()
                .filter(|&d| {
                    constant[(d, d)].abs() <= STRUCTURAL_ZERO * c_norm
                        && coeffs.iter().zip(&coeff_norms).all(|(m, &nm)| m[(d, d)].abs() <= STRUCTURAL_ZERO * nm)
                })
                .collect();
            if forced.is_empty() {
                continue;
            }
            if block.strict {
                return (
                    None,
                    Reduction::StructurallyInfeasible(format!(
                        "strict block `{}` has an identically zero diagonal entry",
                        block.label
                    )),
                );
            }
            for &d in &forced {
                for &e in active[bi].iter().filter(|&&e| e != d) {
                    let row: Vec<f64> = block.coeffs.iter().map(|m| m[(d, e)]).collect();
                    let rhs = -block.constant[(d, e)];
                    if row.iter().all(|v| *v == 0.0) {
                        if rhs != 0.0 {
                            return (
                                None,
                                Reduction::StructurallyInfeasible(format!(
                                    "block `{}` forces a nonzero constant entry to vanish",
                                    block.label
                                )),
                            );
                        }
                        continue;
                    }
                    equalities.push(LinearEquality { coeffs: row, rhs });
                }
            }
            active[bi].retain(|d| !forced.contains(d));
            changed = true;
        }
        if !changed {
            break sol;
        }
    };

    // A diagonal entry that no variable touches must already be nonnegative.
    for (bi, block) in program.blocks.iter().enumerate() {
        let sign = block.sense.sign();
        let margin = if block.strict { epsilon_strict } else { 0.0 };
        let constant = block.evaluate(solution.x0.as_slice()) * sign;
        let c_norm = constant.norm();
        for &d in &active[bi] {
            let touched = block
                .coeffs
                .iter()
                .enumerate()
                .any(|(j, cj)| cj[(d, d)] != 0.0 && solution.basis.row(j).iter().any(|w| *w != 0.0));
            if !touched && constant[(d, d)] - margin < -STRUCTURAL_ZERO * c_norm {
                return (
                    None,
                    Reduction::StructurallyInfeasible(format!(
                        "block `{}` has a fixed diagonal entry {:.3e} below its margin {:.3e}",
                        block.label,
                        constant[(d, d)],
                        margin
                    )),
                );
            }
        }
    }

    let objective = solution.basis.transpose() * DVector::from_column_slice(&program.objective);
    let mut blocks = Vec::new();
    for (bi, block) in program.blocks.iter().enumerate() {
        let rows = &active[bi];
        if rows.is_empty() {
            continue;
        }
        let sign = block.sense.sign();
        let margin = if block.strict { epsilon_strict } else { 0.0 };
        let mut constant = restrict(&(block.evaluate(solution.x0.as_slice()) * sign), rows)
            - DMatrix::identity(rows.len(), rows.len()) * margin;
        let mut coeffs: Vec<DMatrix<f64>> = (0..solution.basis.ncols())
            .map(|k| {
                let mut m = DMatrix::zeros(rows.len(), rows.len());
                for (j, cj) in block.coeffs.iter().enumerate() {
                    let w = solution.basis[(j, k)];
                    if w != 0.0 {
                        m += restrict(cj, rows) * (w * sign);
                    }
                }
                m
            })
            .collect();
        let mut scale = constant.norm();
        if scale == 0.0 {
            scale = coeffs.iter().map(|m| m.norm()).fold(0.0, f64::max);
        }
        if scale > 0.0 {
            constant /= scale;
            for m in &mut coeffs {
                *m /= scale;
            }
        }
        blocks.push(ReducedBlock { constant, coeffs });
    }
    (Some(ReducedProblem { x0: solution.x0, basis: solution.basis, objective, blocks }), Reduction::Reduced)
}
