//! Classical decentralized designs that ignore coupling: LQR and pole placement on a two-DGU grid.

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, SMatrix, SVector, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use gridforge_lmi::linalg;

use crate::error::BaselineError;
use crate::model::{
    appendix_a_matrices, assemble_global, controllability_rank, Dgu, DguId, DguParams, FilterParams, LineParams,
    LoadModel, MicrogridTopology,
};

/// Converter constants of the two-DGU example.
pub const TWO_DGU_FILTERS: [FilterParams; 2] =
    [FilterParams { r_t: 0.1, l_t: 1.8e-3, c_t: 2.2e-3 }, FilterParams { r_t: 0.2, l_t: 1.7e-3, c_t: 2.0e-3 }];
pub const TWO_DGU_LINE_R: f64 = 0.05;
pub const TWO_DGU_LINE_L: f64 = 1.8e-6;

/// LQR weights of the two-DGU example.
pub const TWO_DGU_LQR: [LqrSpec; 2] =
    [LqrSpec { q: [1e-3, 1e-2, 1e3], r: 0.1 }, LqrSpec { q: [1e-2, 1e-2, 1e4], r: 1e-2 }];

/// Closed-loop pole targets of the two-DGU example.
pub const TWO_DGU_POLES: [[f64; 3]; 2] = [[-8519.0, -530.4, -1.46], [-9373.4, -571.9, -1.44]];

/// Published spectra of the two-DGU example as `(re, im)` pairs.
pub mod reference {
    pub const LQR_DECOUPLED: [[(f64, f64); 3]; 2] =
        [[(-9062.9, 0.0), (-14.3, 0.0), (-194.5, 0.0)], [(-9971.7, 0.0), (-48.6, 0.0), (-606.4, 0.0)]];
    pub const LQR_COUPLED: [(f64, f64); 6] =
        [(-19077.0, 0.0), (20.0, 560.0), (20.0, -560.0), (-690.0, 0.0), (-161.0, 0.0), (-11.0, 0.0)];
    pub const PLACEMENT_COUPLED: [(f64, f64); 6] =
        [(-18803.0, 0.0), (23.0, 2319.0), (23.0, -2319.0), (-237.0, 0.0), (-0.16, 0.0), (-0.13, 0.0)];
}

/// Diagonal state weights and scalar input weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqrSpec {
    pub q: [f64; 3],
    pub r: f64,
}

impl LqrSpec {
    fn validate(&self) -> Result<(), BaselineError> {
        if !(self.r > 0.0) || self.q.iter().any(|q| !(*q >= 0.0)) {
            return Err(BaselineError::NoStabilizingSolution("weights must be Q ⪰ 0, R > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CareSolution {
    pub x: Matrix3<f64>,
    /// `K = −R⁻¹ Bᵀ X`, applied as `u = K x`.
    pub k: RowVector3<f64>,
    /// Frobenius norm of the Riccati residual.
    pub residual: f64,
}

fn care_residual(a: &Matrix3<f64>, b: &Vector3<f64>, spec: &LqrSpec, x: &Matrix3<f64>) -> f64 {
    let q = Matrix3::from_diagonal(&Vector3::from(spec.q));
    let xb = x * b;
    (a.transpose() * x + x * a - xb * xb.transpose() / spec.r + q).norm()
}

/// Solves `Aclᵀ X + X Acl = −W` through the Kronecker form.
fn lyapunov(acl: &Matrix3<f64>, w: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let eye = Matrix3::<f64>::identity();
    let at = acl.transpose();
    let mut kron = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    // vec(AᵀX + XA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(X), column-major.
                    kron[(3 * j + i, 3 * l + k)] = eye[(j, l)] * at[(i, k)] + at[(j, l)] * eye[(i, k)];
                }
            }
        }
    }
    let rhs = SVector::<f64, 9>::from_iterator((-w).iter().copied());
    let sol = kron.lu().solve(&rhs)?;
    let x = Matrix3::from_iterator(sol.iter().copied());
    Some(0.5 * (x + x.transpose()))
}

/// Null vector of a complex square matrix (right singular vector of the smallest singular value).
fn null_vector(m: &DMatrix<Complex64>) -> DVector<Complex64> {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let idx = svd.singular_values.argmin().0;
    v_t.row(idx).transpose().map(|z| z.conj())
}

/// Stabilizing solution of the continuous-time algebraic Riccati equation.
///
/// The stable invariant subspace of the Hamiltonian gives a first solution, which Newton–Kleinman
/// iterations then polish.
pub fn solve_care(a: &Matrix3<f64>, b: &Vector3<f64>, spec: &LqrSpec) -> Result<CareSolution, BaselineError> {
    spec.validate()?;
    let q = Matrix3::from_diagonal(&Vector3::from(spec.q));
    let s = b * b.transpose() / spec.r;
    let mut h = DMatrix::<f64>::zeros(6, 6);
    h.view_mut((0, 0), (3, 3)).copy_from(a);
    h.view_mut((0, 3), (3, 3)).copy_from(&(-s));
    h.view_mut((3, 0), (3, 3)).copy_from(&(-q));
    h.view_mut((3, 3), (3, 3)).copy_from(&(-a.transpose()));

    let eigs = linalg::general_eig(&h)?;
    let stable: Vec<Complex64> = eigs.iter().copied().filter(|z| z.re < 0.0).collect();
    if stable.len() != 3 {
        return Err(BaselineError::NoStabilizingSolution(format!(
            "Hamiltonian has {} stable eigenvalues, expected 3",
            stable.len()
        )));
    }
    let hc = h.map(|v| Complex64::new(v, 0.0));
    let mut basis = DMatrix::<Complex64>::zeros(6, 3);
    for (col, lambda) in stable.iter().enumerate() {
        let shifted = &hc - DMatrix::<Complex64>::identity(6, 6) * *lambda;
        basis.set_column(col, &null_vector(&shifted));
    }
    let u1 = basis.rows(0, 3).into_owned();
    let u2 = basis.rows(3, 3).into_owned();
    let u1_inv = u1
        .try_inverse()
        .ok_or_else(|| BaselineError::NoStabilizingSolution("stable subspace is not a graph".into()))?;
    let xc = u2 * u1_inv;
    let mut x = Matrix3::from_fn(|i, j| xc[(i, j)].re);
    x = 0.5 * (x + x.transpose());

    let mut residual = care_residual(a, b, spec, &x);
    for _ in 0..8 {
        let k = -(b.transpose() * x) / spec.r;
        let acl = a + b * k;
        let Some(next) = lyapunov(&acl, &(q + k.transpose() * k * spec.r)) else { break };
        let next_residual = care_residual(a, b, spec, &next);
        if !(next_residual < residual) {
            break;
        }
        x = next;
        residual = next_residual;
    }
    let k = -(b.transpose() * x) / spec.r;
    let acl = a + b * k;
    let abscissa = linalg::spectral_abscissa(&DMatrix::from_iterator(3, 3, acl.iter().copied()))?;
    if !(abscissa < 0.0) {
        return Err(BaselineError::NoStabilizingSolution(format!("closed loop has spectral abscissa {abscissa:.3e}")));
    }
    Ok(CareSolution { x, k, residual })
}

fn check_targets(targets: &[Complex64; 3]) -> Result<(), BaselineError> {
    for t in targets {
        let tol = 1e-12 * t.norm().max(1.0);
        let closed = t.im.abs() <= tol || targets.iter().any(|u| (u - t.conj()).norm() <= tol);
        if !closed {
            return Err(BaselineError::NonConjugateTargets);
        }
    }
    Ok(())
}

/// Real coefficients `[c0, c1, c2]` of `s³ + c2 s² + c1 s + c0 = Π (s − λ)`.
fn monic_coefficients(targets: &[Complex64; 3]) -> [f64; 3] {
    let [l1, l2, l3] = *targets;
    let c2 = -(l1 + l2 + l3);
    let c1 = l1 * l2 + l1 * l3 + l2 * l3;
    let c0 = -(l1 * l2 * l3);
    [c0.re, c1.re, c2.re]
}

/// Single-input pole placement by Ackermann's formula; returns `K` for `u = K x`.
pub fn place_poles(
    a: &Matrix3<f64>,
    b: &Vector3<f64>,
    targets: &[Complex64; 3],
) -> Result<RowVector3<f64>, BaselineError> {
    check_targets(targets)?;
    if controllability_rank(a, b) < 3 {
        return Err(BaselineError::Uncontrollable);
    }
    let ab = a * b;
    let ctrb = Matrix3::from_columns(&[*b, ab, a * ab]);
    let [c0, c1, c2] = monic_coefficients(targets);
    let a2 = a * a;
    let phi = a2 * a + a2 * c2 + a * c1 + Matrix3::identity() * c0;
    // Last row of C⁻¹, obtained by solving Cᵀ r = e3.
    let row = ctrb.transpose().lu().solve(&Vector3::new(0.0, 0.0, 1.0)).ok_or(BaselineError::Uncontrollable)?;
    Ok(-(row.transpose() * phi))
}

/// Same gain as [`place_poles`], computed from the closed-loop eigenvectors instead.
///
/// For each target `λ`, the eigenvector is `w = (λI − A)⁻¹ B` up to scale, and `K w = 1`.
/// Targets must be distinct and must not be open-loop eigenvalues.
pub fn place_poles_eigenstructure(
    a: &Matrix3<f64>,
    b: &Vector3<f64>,
    targets: &[Complex64; 3],
) -> Result<RowVector3<f64>, BaselineError> {
    check_targets(targets)?;
    if controllability_rank(a, b) < 3 {
        return Err(BaselineError::Uncontrollable);
    }
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let bc = b.map(|v| Complex64::new(v, 0.0));
    let mut w = nalgebra::Matrix3::<Complex64>::zeros();
    for (col, lambda) in targets.iter().enumerate() {
        let shifted = nalgebra::Matrix3::<Complex64>::identity() * *lambda - ac;
        let v = shifted.lu().solve(&bc).ok_or(BaselineError::Uncontrollable)?;
        w.set_column(col, &v);
    }
    let ones = nalgebra::Vector3::<Complex64>::from_element(Complex64::new(1.0, 0.0));
    let k = w.transpose().lu().solve(&ones).ok_or(BaselineError::Uncontrollable)?;
    Ok(RowVector3::new(k[0].re, k[1].re, k[2].re))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMethod {
    Lqr,
    PolePlacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DestabilizationReport {
    pub method: DesignMethod,
    pub gains: [RowVector3<f64>; 2],
    pub decoupled: [Vec<Complex64>; 2],
    pub coupled: Vec<Complex64>,
    /// Eigenvalue with positive real part and positive imaginary part, when one exists.
    pub unstable_pair: Option<Complex64>,
}

/// Two-DGU grid of the example as a topology, with resistive placeholder loads.
pub fn two_dgu_topology() -> MicrogridTopology {
    let dgus = TWO_DGU_FILTERS
        .iter()
        .enumerate()
        .map(|(i, f)| Dgu {
            id: DguId(i as u32 + 1),
            params: DguParams { r_t: f.r_t, l_t: f.l_t, c_t: f.c_t, load: LoadModel::Resistive(10.0), v_ref: 48.0 },
        })
        .collect();
    let line = LineParams::new(DguId(1), DguId(2), TWO_DGU_LINE_R).with_inductance(TWO_DGU_LINE_L);
    MicrogridTopology::new(dgus, vec![line]).expect("constant topology is valid")
}

fn to_dyn(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(3, 3, m.iter().copied())
}

/// Designs each DGU as if isolated, then closes the loop on the coupled grid.
pub fn destabilization_demo(method: DesignMethod) -> Result<DestabilizationReport, BaselineError> {
    let [f1, f2] = TWO_DGU_FILTERS;
    let local = appendix_a_matrices(&f1, &f2, TWO_DGU_LINE_R)?;
    let b_hats = [Vector3::new(0.0, 1.0 / f1.l_t, 0.0), Vector3::new(0.0, 1.0 / f2.l_t, 0.0)];
    let mut gains = [RowVector3::zeros(); 2];
    for i in 0..2 {
        gains[i] = match method {
            DesignMethod::Lqr => solve_care(&local[i], &b_hats[i], &TWO_DGU_LQR[i])?.k,
            DesignMethod::PolePlacement => {
                let t = TWO_DGU_POLES[i].map(|p| Complex64::new(p, 0.0));
                place_poles(&local[i], &b_hats[i], &t)?
            }
        };
    }
    let decoupled = [
        linalg::general_eig(&to_dyn(&(local[0] + b_hats[0] * gains[0])))?,
        linalg::general_eig(&to_dyn(&(local[1] + b_hats[1] * gains[1])))?,
    ];
    let system = assemble_global(&two_dgu_topology())?;
    let closed = crate::certification::closed_loop_matrix(&system, &gains);
    let coupled = linalg::general_eig(&closed)?;
    let unstable_pair = coupled.iter().copied().find(|z| z.re > 0.0 && z.im > 0.0);
    Ok(DestabilizationReport { method, gains, decoupled, coupled, unstable_pair })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMatch {
    /// `(computed, reference, relative error)` in reference order.
    pub pairs: Vec<(Complex64, Complex64, f64)>,
    pub max_relative_error: f64,
    pub signs_agree: bool,
    pub passed: bool,
}

/// Matches two equally sized spectra by the assignment that minimizes the worst relative error.
///
/// A pair passes when `|λ − λ_ref| ≤ rel_tol |λ_ref|` and the real parts have the same sign.
pub fn match_spectrum(computed: &[Complex64], reference: &[Complex64], rel_tol: f64) -> SpectrumMatch {
    let n = reference.len();
    if computed.len() != n {
        return SpectrumMatch { pairs: vec![], max_relative_error: f64::INFINITY, signs_agree: false, passed: false };
    }
    let rel = |c: Complex64, r: Complex64| (c - r).norm() / r.norm().max(1e-300);
    // Ties on the worst error are broken by the total error, so conjugates pair up sensibly.
    let mut best: Option<((f64, f64), Vec<usize>)> = None;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |p| {
        let errors = (0..n).map(|i| rel(computed[p[i]], reference[i]));
        let score = errors.fold((0.0, 0.0), |(w, s), e| (f64::max(w, e), s + e));
        if best.as_ref().is_none_or(|(b, _)| score.0 < b.0 || (score.0 == b.0 && score.1 < b.1)) {
            best = Some((score, p.to_vec()));
        }
    });
    let ((max_relative_error, _), order) = best.expect("at least one permutation");
    let pairs: Vec<_> =
        (0..n).map(|i| (computed[order[i]], reference[i], rel(computed[order[i]], reference[i]))).collect();
    let signs_agree = pairs.iter().all(|(c, r, _)| c.re.signum() == r.re.signum());
    SpectrumMatch { pairs, max_relative_error, signs_agree, passed: signs_agree && max_relative_error <= rel_tol }
}

fn permute(items: &mut [usize], start: usize, visit: &mut dyn FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

pub fn to_complex(values: &[(f64, f64)]) -> Vec<Complex64> {
    values.iter().map(|&(re, im)| Complex64::new(re, im)).collect()
}
