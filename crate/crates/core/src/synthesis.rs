//! Local controller synthesis: one small LMI per DGU, independent of the lines attached to it.

use nalgebra::{DMatrix, Matrix2, Matrix3, RowVector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gridforge_lmi::{linalg, solve, AffineMatrix, LmiProgram, Sense, SolveStatus, SolverOptions};

use crate::error::{ModelError, SynthesisError};
use crate::model::{augmented_local, AugmentedDgu, Dgu, DguId, FilterParams};

/// Cost weights on (γ1, γ2, γ3, β, ζ).
pub const DEFAULT_ALPHAS: [f64; 5] = [10.0, 1.0, 100.0, 1000.0, 1e-9];

/// Relative threshold below which the integrator gain counts as zero.
pub const K3_REL_TOL: f64 = 1e-9;

/// PSD/NSD tolerance `1e−8 (1 + ‖M‖_F)`.
pub fn psd_tolerance(frobenius: f64) -> f64 {
    1e-8 * (1.0 + frobenius)
}

/// Network-wide Lyapunov scaling σ̄ (positive).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SigmaBar(f64);

impl SigmaBar {
    pub fn new(value: f64) -> Result<Self, ModelError> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(ModelError::SigmaBar)
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SigmaBar {
    type Error = ModelError;
    fn try_from(v: f64) -> Result<Self, ModelError> {
        Self::new(v)
    }
}

impl From<SigmaBar> for f64 {
    fn from(s: SigmaBar) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub sigma_bar: SigmaBar,
    pub alphas: [f64; 5],
    pub solver: SolverOptions,
}

impl SynthesisConfig {
    pub fn new(sigma_bar: f64) -> Result<Self, ModelError> {
        Ok(Self { sigma_bar: SigmaBar::new(sigma_bar)?, alphas: DEFAULT_ALPHAS, solver: SolverOptions::default() })
    }

    pub fn with_alphas(mut self, alphas: [f64; 5]) -> Result<Self, ModelError> {
        if alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(ModelError::Alphas);
        }
        self.alphas = alphas;
        Ok(self)
    }
}

/// Raw LMI variables at the solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSolution {
    pub y: Matrix3<f64>,
    pub g: RowVector3<f64>,
    pub gamma: [f64; 3],
    pub beta: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub status: String,
    pub iterations: usize,
    pub objective: f64,
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalController {
    pub filter: FilterParams,
    pub sigma_bar: f64,
    /// Gain row `[k1, k2, k3]` with `u = K x̂`.
    pub k: RowVector3<f64>,
    pub p: Matrix3<f64>,
    pub eta: f64,
    pub delta: f64,
    pub q_local: Matrix3<f64>,
    pub raw: RawSolution,
    pub diagnostics: SolverDiagnostics,
}

impl LocalController {
    /// Closed-loop local matrix `F = Â_ii + B̂ K`.
    pub fn closed_loop(&self) -> Result<Matrix3<f64>, ModelError> {
        let aug = augmented_local(&self.filter)?;
        Ok(aug.a_hat_ii + aug.b_hat * self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DenialReason {
    /// The local LMI has no solution with the required margins.
    Infeasible(String),
    /// The solution exists but yields `k3 ≈ 0`; re-weighting the cost may help.
    VanishingIntegratorGain { k3: f64 },
    /// Plug-in request without any line.
    WouldBeIsolated,
    /// Removing the DGU would split the network.
    Disconnects,
}

impl std::fmt::Display for DenialReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DenialReason::Infeasible(why) => write!(f, "infeasible: {why}"),
            DenialReason::VanishingIntegratorGain { k3 } => {
                write!(f, "k3 = {k3:.3e} is numerically zero; try again with different cost weights")
            }
            DenialReason::WouldBeIsolated => write!(f, "would be isolated"),
            DenialReason::Disconnects => write!(f, "removal disconnects the network"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisOutcome {
    Accepted(Box<LocalController>),
    Denied(DenialReason),
}

impl SynthesisOutcome {
    pub fn controller(&self) -> Option<&LocalController> {
        match self {
            SynthesisOutcome::Accepted(c) => Some(c),
            SynthesisOutcome::Denied(_) => None,
        }
    }
}

/// Variable layout of the local program.
pub mod var {
    pub const Y22: usize = 0;
    pub const Y23: usize = 1;
    pub const Y33: usize = 2;
    pub const G1: usize = 3;
    pub const G2: usize = 4;
    pub const G3: usize = 5;
    pub const GAMMA1: usize = 6;
    pub const GAMMA2: usize = 7;
    pub const GAMMA3: usize = 8;
    pub const BETA: usize = 9;
    pub const ZETA: usize = 10;
    pub const COUNT: usize = 11;
}

fn unit(rows: usize, cols: usize, entries: &[(usize, usize)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for &(r, c) in entries {
        m[(r, c)] = 1.0;
    }
    m
}

fn to_dynamic(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(3, 3, m.iter().copied())
}

/// The Lyapunov-inverse variable `Y` as an affine expression with `Y(1,1) = 1/(σ̄ C_t)`.
fn y_expression(filter: &FilterParams, sigma_bar: SigmaBar) -> AffineMatrix {
    let n = var::COUNT;
    let mut pinned = DMatrix::zeros(3, 3);
    pinned[(0, 0)] = 1.0 / (sigma_bar.get() * filter.c_t);
    let y = AffineMatrix::constant(pinned, n);
    let y = &y + &AffineMatrix::variable(unit(3, 3, &[(1, 1)]), var::Y22, n);
    let y = &y + &AffineMatrix::variable(unit(3, 3, &[(1, 2), (2, 1)]), var::Y23, n);
    &y + &AffineMatrix::variable(unit(3, 3, &[(2, 2)]), var::Y33, n)
}

fn g_expression() -> AffineMatrix {
    let n = var::COUNT;
    let g = AffineMatrix::variable(unit(1, 3, &[(0, 0)]), var::G1, n);
    let g = &g + &AffineMatrix::variable(unit(1, 3, &[(0, 1)]), var::G2, n);
    &g + &AffineMatrix::variable(unit(1, 3, &[(0, 2)]), var::G3, n)
}

fn scalar(var_index: usize) -> AffineMatrix {
    AffineMatrix::variable(DMatrix::identity(1, 1), var_index, var::COUNT)
}

/// Builds the local program over `{Y22, Y23, Y33, g1, g2, g3, γ1, γ2, γ3, β, ζ}`.
///
/// The Lyapunov block is `diag(X, T)` with `X = ÂY + YÂᵀ + B̂G + GᵀB̂ᵀ ⪯ 0` and
/// `T = [[tr X, vec(Y)ᵀ], [vec(Y), −diag(γ1 I, γ2 I, γ3 I)]] ⪯ 0`.
pub fn assemble_problem(
    dgu: &AugmentedDgu,
    filter: &FilterParams,
    cfg: &SynthesisConfig,
) -> Result<LmiProgram, SynthesisError> {
    filter.validate()?;
    let n = var::COUNT;
    let a = to_dynamic(&dgu.a_hat_ii);
    let b = DMatrix::from_column_slice(3, 1, dgu.b_hat.as_slice());
    let y = y_expression(filter, cfg.sigma_bar);
    let g = g_expression();

    let ay = y.left_mul(&a);
    let bg = g.left_mul(&b);
    let x = &(&ay + &ay.transpose()) + &(&bg + &bg.transpose());

    let vec_y = AffineMatrix::from_blocks(&[vec![y.column(0)], vec![y.column(1)], vec![y.column(2)]]);
    let neg_gamma = AffineMatrix::block_diag(&[
        AffineMatrix::variable(-DMatrix::identity(3, 3), var::GAMMA1, n),
        AffineMatrix::variable(-DMatrix::identity(3, 3), var::GAMMA2, n),
        AffineMatrix::variable(-DMatrix::identity(3, 3), var::GAMMA3, n),
    ]);
    let trace_block = AffineMatrix::from_blocks(&[vec![x.trace(), vec_y.transpose()], vec![vec_y, neg_gamma]]);
    let lyapunov = AffineMatrix::block_diag(&[x, trace_block]);

    let gain_bound = AffineMatrix::from_blocks(&[
        vec![AffineMatrix::variable(-DMatrix::identity(3, 3), var::BETA, n), g.transpose()],
        vec![g.clone(), AffineMatrix::constant(-DMatrix::identity(1, 1), n)],
    ]);
    let inverse_bound = AffineMatrix::from_blocks(&[
        vec![y.clone(), AffineMatrix::constant(DMatrix::identity(3, 3), n)],
        vec![
            AffineMatrix::constant(DMatrix::identity(3, 3), n),
            AffineMatrix::variable(DMatrix::identity(3, 3), var::ZETA, n),
        ],
    ]);

    let mut objective = vec![0.0; n];
    for (slot, alpha) in [var::GAMMA1, var::GAMMA2, var::GAMMA3, var::BETA, var::ZETA].into_iter().zip(cfg.alphas) {
        objective[slot] = alpha;
    }
    let mut program = LmiProgram::new(n).with_objective(objective);
    program.push_block(lyapunov.into_block("lyapunov", Sense::Nsd, false));
    program.push_block(gain_bound.into_block("gain bound", Sense::Nsd, true));
    program.push_block(inverse_bound.into_block("inverse bound", Sense::Psd, true));
    for (label, v) in [("gamma1", var::GAMMA1), ("gamma2", var::GAMMA2), ("gamma3", var::GAMMA3)] {
        program.push_block(scalar(v).into_block(label, Sense::Psd, false));
    }
    program.push_block(scalar(var::BETA).into_block("beta", Sense::Psd, true));
    program.push_block(scalar(var::ZETA).into_block("zeta", Sense::Psd, true));
    Ok(program)
}

/// `Y⁻¹` computed blockwise so the zero pattern of `Y` carries over exactly.
fn structured_inverse(y: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let y22 = Matrix2::new(y[(1, 1)], y[(1, 2)], y[(2, 1)], y[(2, 2)]);
    let inv22 = y22.try_inverse()?;
    let mut p = Matrix3::zeros();
    p[(0, 0)] = 1.0 / y[(0, 0)];
    p.fixed_view_mut::<2, 2>(1, 1).copy_from(&inv22);
    let sym = 0.5 * (p[(1, 2)] + p[(2, 1)]);
    p[(1, 2)] = sym;
    p[(2, 1)] = sym;
    Some(p)
}

pub fn lyapunov_derivative(f: &Matrix3<f64>, p: &Matrix3<f64>) -> Matrix3<f64> {
    f.transpose() * p + p * f
}

/// Frobenius-free spectral norm of a 3×3 matrix via the dynamic routine.
fn spectral_norm3(m: &Matrix3<f64>) -> f64 {
    linalg::norm2(&to_dynamic(m))
}

/// Synthesizes the local controller; `Denied` when the LMI is infeasible or `k3 ≈ 0`.
pub fn synthesize(
    dgu: &AugmentedDgu,
    filter: &FilterParams,
    cfg: &SynthesisConfig,
) -> Result<SynthesisOutcome, SynthesisError> {
    let program = assemble_problem(dgu, filter, cfg)?;
    let solution = solve(&program, &cfg.solver)?;
    match solution.status {
        SolveStatus::Infeasible => return Ok(SynthesisOutcome::Denied(DenialReason::Infeasible(solution.message))),
        SolveStatus::NumericalFailure => return Err(SynthesisError::NumericalFailure(solution.message)),
        SolveStatus::Optimal | SolveStatus::Feasible => {}
    }
    let x = &solution.x;
    let y_dyn = y_expression(filter, cfg.sigma_bar).evaluate(x);
    let y = Matrix3::from_iterator(y_dyn.iter().copied());
    let g = RowVector3::new(x[var::G1], x[var::G2], x[var::G3]);
    let raw = RawSolution {
        y,
        g,
        gamma: [x[var::GAMMA1], x[var::GAMMA2], x[var::GAMMA3]],
        beta: x[var::BETA],
        zeta: x[var::ZETA],
    };
    let eta = cfg.sigma_bar.get() * filter.c_t;
    let mut p = structured_inverse(&y).ok_or_else(|| SynthesisError::Verification("Y is singular".into()))?;
    p[(0, 0)] = eta;
    let k = g * p;
    let f = dgu.a_hat_ii + dgu.b_hat * k;
    let q_local = lyapunov_derivative(&f, &p);
    let diagnostics = SolverDiagnostics {
        status: format!("{:?}", solution.status),
        iterations: solution.iterations,
        objective: solution.objective_value,
        margins: solution.margins.clone(),
    };

    let k_norm = k.norm();
    if k[2].abs() <= K3_REL_TOL * k_norm {
        return Ok(SynthesisOutcome::Denied(DenialReason::VanishingIntegratorGain { k3: k[2] }));
    }
    let delta = -(k[1] - filter.r_t) / k[2];
    let ctrl = LocalController {
        filter: *filter,
        sigma_bar: cfg.sigma_bar.get(),
        k,
        p,
        eta,
        delta,
        q_local,
        raw,
        diagnostics,
    };
    verify_controller(&ctrl)?;
    Ok(SynthesisOutcome::Accepted(Box::new(ctrl)))
}

/// Line-free convenience wrapper: builds the augmented model from the filter constants.
pub fn synthesize_filter(filter: &FilterParams, cfg: &SynthesisConfig) -> Result<SynthesisOutcome, SynthesisError> {
    synthesize(&augmented_local(filter)?, filter, cfg)
}

/// Synthesis runs in parallel above this many DGUs.
pub const PARALLEL_SYNTHESIS_MIN: usize = 5;

/// Synthesizes every DGU independently, keeping each outcome; order follows `dgus`.
pub fn synthesize_dgus(dgus: &[Dgu], cfg: &SynthesisConfig) -> Vec<(DguId, Result<SynthesisOutcome, SynthesisError>)> {
    let work = |d: &Dgu| (d.id, synthesize_filter(&d.params.filter(), cfg));
    if dgus.len() >= PARALLEL_SYNTHESIS_MIN {
        dgus.par_iter().map(work).collect()
    } else {
        dgus.iter().map(work).collect()
    }
}

/// Explicit eigenvalue checks of every controller invariant.
pub fn verify_controller(ctrl: &LocalController) -> Result<(), SynthesisError> {
    let fail = |msg: String| Err(SynthesisError::Verification(msg));
    let p = &ctrl.p;
    if p[(0, 0)] != ctrl.eta || p[(0, 1)] != 0.0 || p[(0, 2)] != 0.0 {
        return fail("P does not have the required block structure".into());
    }
    let p22 = DMatrix::from_row_slice(2, 2, &[p[(1, 1)], p[(1, 2)], p[(2, 1)], p[(2, 2)]]);
    if linalg::min_eig(&p22)? <= 0.0 {
        return fail("P22 is not positive definite".into());
    }
    let q = to_dynamic(&ctrl.q_local);
    let q_norm = q.norm();
    let q_max = linalg::max_eig(&q)?;
    if q_max > psd_tolerance(q_norm) {
        return fail(format!("Q has positive eigenvalue {q_max:.3e}"));
    }
    let edge = (0..3).map(|j| ctrl.q_local[(0, j)].abs().max(ctrl.q_local[(j, 0)].abs())).fold(0.0, f64::max);
    if edge > 1e-8 * spectral_norm3(&ctrl.q_local) {
        return fail(format!("Q first row/column entry {edge:.3e} is not zero"));
    }
    let bound = ctrl.raw.beta.sqrt() * ctrl.raw.zeta;
    if !(ctrl.k.norm() < bound) {
        return fail(format!("‖K‖ = {:.6e} violates the bound {bound:.6e}", ctrl.k.norm()));
    }
    if ctrl.k[2].abs() <= K3_REL_TOL * ctrl.k.norm() {
        return fail("k3 vanishes".into());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum K1Residual {
    Value(f64),
    /// `δ = 0`, which happens only for `k2 = R_t`.
    NotApplicable,
}

/// `|k1 − (1 − L_t/δ − σ̄ L_t / p22)|`.
pub fn verify_k1_identity(ctrl: &LocalController) -> K1Residual {
    if ctrl.delta == 0.0 || ctrl.k[1] == ctrl.filter.r_t {
        return K1Residual::NotApplicable;
    }
    let l_t = ctrl.filter.l_t;
    let predicted = 1.0 - l_t / ctrl.delta - ctrl.sigma_bar * l_t / ctrl.p[(1, 1)];
    K1Residual::Value((ctrl.k[0] - predicted).abs())
}
