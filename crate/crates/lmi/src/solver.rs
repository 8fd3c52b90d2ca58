//! Primal log-det barrier interior-point method with a phase-I feasibility search.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::linalg::{self, min_eig};
use crate::preprocess::{reduce, ReducedBlock, ReducedProblem, Reduction};
use crate::program::LmiProgram;
use crate::ProgramError;

const BARRIER_GROWTH: f64 = 20.0;
const CENTERING_TOL: f64 = 1e-10;
const ARMIJO: f64 = 0.25;
const MIN_STEP: f64 = 1e-14;
const MAX_EXTRAPOLATION: f64 = 1048576.0;
const STALL_DECREMENT: f64 = 1e-6;
const CAP_GROWTH: f64 = 1e3;
const MAX_CAP_RATIO: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative duality-gap bound `m/τ ≤ tol_gap · max(1, |f|)` for optimality.
    pub tol_gap: f64,
    /// Newton iteration budget, applied to each phase separately.
    pub max_iter: usize,
    /// Margin used to realize strict inequalities.
    pub epsilon_strict: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol_gap: 1e-8, max_iter: 200, epsilon_strict: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_feasible(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Feasibility,
    Optimality,
}

/// One accepted Newton step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub phase: Phase,
    pub tau: f64,
    /// Barrier merit after the step.
    pub merit: f64,
    /// Squared Newton decrement before the step.
    pub decrement: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    /// Minimum eigenvalue of each block's slack (`F` for PSD, `−F` for NSD), in program order.
    pub margins: Vec<f64>,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub message: String,
}

/// Tolerance for "PSD up to round-off" used in the margin contract.
pub fn epsilon_psd(block: &DMatrix<f64>) -> f64 {
    1e-9 * (1.0 + block.norm())
}

struct Barrier<'a> {
    blocks: &'a [ReducedBlock],
    /// Phase I appends a variable `t` entering every block as `t·I`.
    with_shift: bool,
    /// Phase I bound `Σ_k tr S_k(z) ≤ cap`, which keeps the barrier bounded below.
    cap: Option<f64>,
}

impl Barrier<'_> {
    fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.constant.nrows()).sum()
    }

    /// Gradient of `Σ_k tr S_k(z)` (constant, since the trace is affine).
    fn trace_gradient(&self, n: usize) -> DVector<f64> {
        let mut a = DVector::zeros(n);
        for block in self.blocks {
            for (j, c) in block.coeffs.iter().enumerate() {
                a[j] += c.trace();
            }
            if self.with_shift {
                a[n - 1] += block.constant.nrows() as f64;
            }
        }
        a
    }

    fn total_trace(&self, z: &DVector<f64>) -> f64 {
        let constant: f64 = self.blocks.iter().map(|b| b.constant.trace()).sum();
        constant + self.trace_gradient(z.len()).dot(z)
    }

    fn cap_slack(&self, z: &DVector<f64>) -> Option<f64> {
        self.cap.map(|cap| cap - self.total_trace(z))
    }

    fn slack(&self, block: &ReducedBlock, z: &DVector<f64>) -> DMatrix<f64> {
        let mut s = block.constant.clone();
        for (a, &zk) in block.coeffs.iter().zip(z.iter()) {
            if zk != 0.0 {
                s += a * zk;
            }
        }
        if self.with_shift {
            let t = z[z.len() - 1];
            for i in 0..s.nrows() {
                s[(i, i)] += t;
            }
        }
        s
    }

    /// `Σ log det S_k(z)`, or `None` outside the open cone.
    fn log_det(&self, z: &DVector<f64>) -> Option<f64> {
        let mut total = 0.0;
        if let Some(s) = self.cap_slack(z) {
            if !(s > 0.0) {
                return None;
            }
            total += s.ln();
        }
        for block in self.blocks {
            let chol = Cholesky::new(self.slack(block, z))?;
            total += 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        total.is_finite().then_some(total)
    }

    fn merit(&self, z: &DVector<f64>, c: &DVector<f64>, tau: f64) -> Option<f64> {
        Some(tau * c.dot(z) - self.log_det(z)?)
    }

    /// Gradient and Hessian of the barrier term `−Σ log det S_k`.
    fn derivatives(&self, z: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = z.len();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for block in self.blocks {
            let m = block.constant.nrows();
            let chol = Cholesky::new(self.slack(block, z))?;
            let l = chol.l();
            let whiten = |a: &DMatrix<f64>| -> DMatrix<f64> {
                let left = l.solve_lower_triangular(a).expect("nonsingular factor");
                l.solve_lower_triangular(&left.transpose()).expect("nonsingular factor")
            };
            let mut white: Vec<DMatrix<f64>> = block.coeffs.iter().map(whiten).collect();
            if self.with_shift {
                white.push(whiten(&DMatrix::identity(m, m)));
            }
            for i in 0..n {
                grad[i] -= white[i].trace();
                for j in 0..=i {
                    let h = white[i].dot(&white[j]);
                    hess[(i, j)] += h;
                    if i != j {
                        hess[(j, i)] += h;
                    }
                }
            }
        }
        if let Some(s) = self.cap_slack(z) {
            let a = self.trace_gradient(n);
            grad += &a / s;
            hess += &a * a.transpose() / (s * s);
        }
        Some((grad, hess))
    }
}

/// Solves `H d = −g` with Jacobi scaling; regularizes if the Hessian is singular.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let d = DVector::from_iterator(n, hess.diagonal().iter().map(|&h| if h > 0.0 { 1.0 / h.sqrt() } else { 1.0 }));
    let scaled = DMatrix::from_fn(n, n, |i, j| hess[(i, j)] * d[i] * d[j]);
    let rhs = -grad.component_mul(&d);
    for reg in [0.0, 1e-14, 1e-12, 1e-10, 1e-8] {
        let m = &scaled + DMatrix::identity(n, n) * reg;
        if let Some(chol) = Cholesky::<f64, Dyn>::new(m) {
            let y = chol.solve(&rhs);
            if y.iter().all(|v| v.is_finite()) {
                return Some(y.component_mul(&d));
            }
        }
    }
    None
}

enum Centering {
    Centered,
    /// Phase I reached `t < 0`.
    Interior,
    IterationLimit,
    Breakdown(&'static str),
}

struct Run<'a> {
    options: &'a SolverOptions,
    iterations: usize,
    phase_iterations: usize,
    trace: Vec<IterationRecord>,
}

impl Run<'_> {
    fn center(
        &mut self,
        barrier: &Barrier,
        z: &mut DVector<f64>,
        c: &DVector<f64>,
        tau: f64,
        phase: Phase,
    ) -> Centering {
        let mut merit = match barrier.merit(z, c, tau) {
            Some(m) => m,
            None => return Centering::Breakdown("iterate left the cone"),
        };
        let mut log_det = barrier.log_det(z).expect("merit was finite");
        loop {
            if phase == Phase::Feasibility && z[z.len() - 1] < 0.0 {
                return Centering::Interior;
            }
            if self.phase_iterations >= self.options.max_iter {
                return Centering::IterationLimit;
            }
            let Some((grad_barrier, hess)) = barrier.derivatives(z) else {
                return Centering::Breakdown("slack lost definiteness");
            };
            let grad = c * tau + grad_barrier;
            let Some(dz) = newton_direction(&hess, &grad) else {
                return Centering::Breakdown("singular Newton system");
            };
            let slope = grad.dot(&dz);
            let decrement = -slope;
            if !(decrement.is_finite()) {
                return Centering::Breakdown("non-finite Newton decrement");
            }
            if decrement * 0.5 <= CENTERING_TOL {
                return Centering::Centered;
            }
            // Merit changes are measured relative to the current point: at large tau the
            // absolute merit is dominated by tau * c'z and loses the barrier's digits.
            let linear = tau * c.dot(&dz);
            let change = |step: f64| -> Option<(DVector<f64>, f64, f64)> {
                let trial = &*z + &dz * step;
                let ld = barrier.log_det(&trial)?;
                Some((trial, ld, linear * step - (ld - log_det)))
            };
            let mut step = 1.0;
            let accepted = loop {
                if let Some((trial, ld, delta)) = change(step) {
                    if delta < 0.0 && delta <= ARMIJO * step * slope {
                        break Some((trial, ld, delta));
                    }
                }
                step *= 0.5;
                if step < MIN_STEP {
                    break None;
                }
            };
            // Far from the center a full step may still be short (e.g. a weakly weighted
            // variable growing geometrically); keep doubling while the merit keeps falling.
            let accepted = match accepted {
                Some(mut best) if step == 1.0 && decrement > 1.0 => {
                    let mut longer = 2.0;
                    while longer <= MAX_EXTRAPOLATION {
                        match change(longer) {
                            Some(next) if next.2 < best.2 => {
                                best = next;
                                step = longer;
                                longer *= 2.0;
                            }
                            _ => break,
                        }
                    }
                    Some(best)
                }
                other => other,
            };
            let Some((trial, ld, delta)) = accepted else {
                // No descent is representable at this precision. That only means "centered"
                // if the Newton decrement is already small.
                if decrement * 0.5 <= STALL_DECREMENT {
                    return Centering::Centered;
                }
                return Centering::Breakdown("line search failed far from the central path");
            };
            log_det = ld;
            let m = merit + delta;
            *z = trial;
            merit = m;
            self.iterations += 1;
            self.phase_iterations += 1;
            self.trace.push(IterationRecord { phase, tau, merit, decrement, step });
        }
    }
}

fn finish(
    program: &LmiProgram,
    options: &SolverOptions,
    status: SolveStatus,
    x: Vec<f64>,
    run: Run,
    message: impl Into<String>,
) -> LmiSolution {
    let mut status = status;
    let mut message = message.into();
    let mut margins = Vec::with_capacity(program.blocks.len());
    for block in &program.blocks {
        let slack = block.slack(&x);
        let margin = min_eig(&slack).unwrap_or(f64::NAN);
        margins.push(margin);
        if status.is_feasible() {
            let required = if block.strict { options.epsilon_strict } else { -epsilon_psd(&slack) };
            if !(margin >= required) {
                message = format!("block `{}` margin {:.3e} below required {:.3e}", block.label, margin, required);
                status = SolveStatus::NumericalFailure;
            }
        }
    }
    LmiSolution {
        status,
        objective_value: program.objective_value(&x),
        x,
        margins,
        iterations: run.iterations,
        trace: run.trace,
        message,
    }
}

/// Solves the program. Deterministic for identical inputs.
pub fn solve(program: &LmiProgram, options: &SolverOptions) -> Result<LmiSolution, ProgramError> {
    program.validate()?;
    let mut run = Run { options, iterations: 0, phase_iterations: 0, trace: Vec::new() };
    let (reduced, reduction) = reduce(program, options.epsilon_strict);
    let problem: ReducedProblem = match (reduced, reduction) {
        (Some(p), Reduction::Reduced) => p,
        (_, Reduction::StructurallyInfeasible(msg)) => {
            let x = vec![0.0; program.num_vars];
            return Ok(finish(program, options, SolveStatus::Infeasible, x, run, msg));
        }
        (None, Reduction::Reduced) => unreachable!("reduction without a problem"),
    };
    let nz = problem.num_free();
    let lift = |z: &DVector<f64>| problem.lift(z).as_slice().to_vec();

    let zero = DVector::zeros(nz);
    let interior_at =
        |z: &DVector<f64>| Barrier { blocks: &problem.blocks, with_shift: false, cap: None }.log_det(z).is_some();

    // Phase I: minimize t subject to S_k(z) + t I ≻ 0 until t < 0.
    let mut z = zero.clone();
    if !interior_at(&z) {
        let mut worst: f64 = 0.0;
        for b in &problem.blocks {
            worst = worst.max(-min_eig(&b.constant).unwrap_or(f64::INFINITY));
        }
        if !worst.is_finite() {
            return Ok(finish(program, options, SolveStatus::NumericalFailure, lift(&z), run, "non-finite block data"));
        }
        let mut zt = DVector::zeros(nz + 1);
        zt[nz] = worst + 1.0;
        let mut barrier = Barrier { blocks: &problem.blocks, with_shift: true, cap: None };
        let initial_trace = barrier.total_trace(&zt);
        let mut cap = CAP_GROWTH * initial_trace;
        barrier.cap = Some(cap);
        let m = barrier.dim() as f64 + 1.0;
        let mut c = DVector::zeros(nz + 1);
        c[nz] = 1.0;
        let mut tau = 1.0;
        loop {
            let outcome = run.center(&barrier, &mut zt, &c, tau, Phase::Feasibility);
            let x_now = |zt: &DVector<f64>| lift(&zt.rows(0, nz).into_owned());
            match outcome {
                Centering::Interior => break,
                Centering::Centered => {
                    let t = zt[nz];
                    let gap = m / tau;
                    // The cap's multiplier can be folded into the block multipliers (keeping
                    // them PSD) only when its slack dominates every block eigenvalue; then the
                    // restricted lower bound is also a bound for the uncapped problem.
                    let largest = problem
                        .blocks
                        .iter()
                        .map(|b| linalg::max_eig(&barrier.slack(b, &zt)).unwrap_or(f64::INFINITY))
                        .fold(f64::NEG_INFINITY, f64::max);
                    let cap_inactive = barrier.cap_slack(&zt).is_some_and(|s| s >= largest);
                    let converged = gap <= options.tol_gap * t.abs().max(1.0);
                    if cap_inactive && t - gap > 0.0 {
                        let msg = format!("phase I lower bound {:.3e} > 0", t - gap);
                        return Ok(finish(program, options, SolveStatus::Infeasible, x_now(&zt), run, msg));
                    }
                    if cap_inactive && converged {
                        let msg = format!("phase I optimum {t:.3e} is not negative");
                        return Ok(finish(program, options, SolveStatus::Infeasible, x_now(&zt), run, msg));
                    }
                    if !cap_inactive && (converged || t - gap > 0.0) {
                        cap *= CAP_GROWTH;
                        if cap > MAX_CAP_RATIO * initial_trace {
                            let msg = "phase I needs an unbounded iterate";
                            return Ok(finish(program, options, SolveStatus::NumericalFailure, x_now(&zt), run, msg));
                        }
                        barrier.cap = Some(cap);
                    } else {
                        tau *= BARRIER_GROWTH;
                    }
                }
                Centering::IterationLimit => {
                    let msg = "iteration limit reached in phase I";
                    return Ok(finish(program, options, SolveStatus::NumericalFailure, x_now(&zt), run, msg));
                }
                Centering::Breakdown(why) => {
                    return Ok(finish(program, options, SolveStatus::NumericalFailure, x_now(&zt), run, why));
                }
            }
        }
        z = zt.rows(0, nz).into_owned();
    }

    if problem.objective.iter().all(|&c| c == 0.0) {
        return Ok(finish(program, options, SolveStatus::Feasible, lift(&z), run, "feasible point"));
    }
    if problem.blocks.is_empty() {
        let msg = "objective unbounded: no constraints on free directions";
        return Ok(finish(program, options, SolveStatus::NumericalFailure, lift(&z), run, msg));
    }

    // Phase II: follow the central path.
    let barrier = Barrier { blocks: &problem.blocks, with_shift: false, cap: None };
    let m = barrier.dim() as f64;
    let c = &problem.objective;
    let offset: f64 = program.objective_value(problem.x0.as_slice());
    let mut tau = initial_tau(&barrier, &z, c);
    let mut centered_once = false;
    run.phase_iterations = 0;
    loop {
        match run.center(&barrier, &mut z, c, tau, Phase::Optimality) {
            Centering::Centered | Centering::Interior => {
                let f = offset + c.dot(&z);
                if m / tau <= options.tol_gap * f.abs().max(1.0) {
                    return Ok(finish(program, options, SolveStatus::Optimal, lift(&z), run, "optimal"));
                }
                tau *= BARRIER_GROWTH;
            }
            Centering::IterationLimit => {
                let msg = "iteration limit reached before the gap tolerance";
                return Ok(finish(program, options, SolveStatus::Feasible, lift(&z), run, msg));
            }
            Centering::Breakdown(why) if centered_once => {
                // Every phase II iterate is strictly interior, so a late breakdown still
                // leaves a usable point, only short of the requested gap.
                let msg = format!("stopped at gap {:.1e}: {why}", m / tau * BARRIER_GROWTH);
                return Ok(finish(program, options, SolveStatus::Feasible, lift(&z), run, msg));
            }
            Centering::Breakdown(why) => {
                return Ok(finish(program, options, SolveStatus::NumericalFailure, lift(&z), run, why));
            }
        }
        centered_once = true;
    }
}

/// Barrier weight that best balances the objective against the barrier gradient at `z`.
fn initial_tau(barrier: &Barrier, z: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let fallback = 1.0;
    let Some((g, h)) = barrier.derivatives(z) else { return fallback };
    let (Some(hc), Some(hg)) = (newton_direction(&h, &-c), newton_direction(&h, &-&g)) else {
        return fallback;
    };
    let num = -c.dot(&hg);
    let den = c.dot(&hc);
    let tau = num / den;
    if tau.is_finite() && tau > 0.0 {
        tau.max(1e-12)
    } else {
        fallback
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{LmiBlock, Sense};
    use approx::assert_abs_diff_eq;

    fn block(constant: &[f64], coeffs: &[&[f64]], n: usize, sense: Sense, strict: bool) -> LmiBlock {
        LmiBlock {
            label: "b".into(),
            constant: DMatrix::from_row_slice(n, n, constant),
            coeffs: coeffs.iter().map(|c| DMatrix::from_row_slice(n, n, c)).collect(),
            sense,
            strict,
        }
    }

    #[test]
    fn scalar_boundary() {
        let mut p = LmiProgram::new(1).with_objective(vec![1.0]);
        p.push_block(block(&[0.0], &[&[1.0]], 1, Sense::Psd, false));
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 0.0, epsilon = 1e-7);
    }

    #[test]
    fn interval_feasibility() {
        let mut p = LmiProgram::new(1);
        p.push_block(block(&[0.0, 0.0, 0.0, 1.0], &[&[1.0, 0.0, 0.0, -1.0]], 2, Sense::Psd, false));
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Feasible);
        assert!((0.0..=1.0).contains(&s.x[0]));
        assert!(s.margins[0] >= 0.0);
    }

    #[test]
    fn strict_margin_respected() {
        // minimize x subject to x > 0 → x* = epsilon_strict
        let mut p = LmiProgram::new(1).with_objective(vec![1.0]);
        p.push_block(block(&[0.0], &[&[1.0]], 1, Sense::Psd, true));
        let opts = SolverOptions::default();
        let s = solve(&p, &opts).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(s.x[0] >= opts.epsilon_strict);
        assert_abs_diff_eq!(s.x[0], opts.epsilon_strict, epsilon = 1e-7);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // x ≥ 1 and x ≤ 0
        let mut p = LmiProgram::new(1).with_objective(vec![1.0]);
        p.push_block(block(&[-1.0], &[&[1.0]], 1, Sense::Psd, false));
        p.push_block(block(&[0.0], &[&[1.0]], 1, Sense::Nsd, false));
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn max_eigenvalue_program() {
        // minimize t subject to t I − A ⪰ 0
        let a = [2.0, 1.0, 1.0, 3.0];
        let mut p = LmiProgram::new(1).with_objective(vec![1.0]);
        p.push_block(block(&a.map(|v| -v), &[&[1.0, 0.0, 0.0, 1.0]], 2, Sense::Psd, false));
        let s = solve(&p, &SolverOptions::default()).unwrap();
        let expected = 2.5 + 0.5 * 5f64.sqrt();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(s.objective_value, expected, epsilon = 1e-7);
    }

    #[test]
    fn merit_decreases_within_each_stage() {
        let a = [2.0, 1.0, 1.0, 3.0];
        let mut p = LmiProgram::new(1).with_objective(vec![1.0]);
        p.push_block(block(&a.map(|v| -v), &[&[1.0, 0.0, 0.0, 1.0]], 2, Sense::Psd, false));
        let s = solve(&p, &SolverOptions::default()).unwrap();
        for pair in s.trace.windows(2) {
            if pair[0].tau == pair[1].tau && pair[0].phase == pair[1].phase {
                assert!(pair[1].merit <= pair[0].merit);
            }
        }
    }
}
