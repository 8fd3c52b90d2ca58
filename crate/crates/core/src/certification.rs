//! Numerical certificates for the local and global stability claims.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, RowVector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use gridforge_lmi::linalg;

use crate::error::CertificationError;
use crate::model::{assemble_global, DguId, GlobalSystem, MicrogridTopology};
use crate::synthesis::{psd_tolerance, LocalController, SigmaBar, K3_REL_TOL};

/// Controllers keyed by the DGU they belong to.
pub type ControllerSet = BTreeMap<DguId, LocalController>;

/// Relative eigenvalue threshold for kernel extraction.
pub const KERNEL_REL_TOL: f64 = 1e-7;

/// Relative agreement required between two computations of the same matrix entries.
pub const FORMULA_REL_TOL: f64 = 1e-12;

/// Largest admissible principal angle between computed and predicted kernels (rad).
pub const KERNEL_ANGLE_TOL: f64 = 1e-6;

fn dyn3(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(3, 3, m.iter().copied())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalStructureReport {
    /// Largest eigenvalue of `Q_i`.
    pub q_max_eig: f64,
    /// Eigenvalue of `Q_i` closest to zero.
    pub q_smallest_abs_eig: f64,
    pub q11: f64,
    /// Largest magnitude on the first row or column of `Q_i`.
    pub edge_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl LocalStructureReport {
    pub fn max_violation(&self) -> f64 {
        self.q_max_eig.max(0.0).max(self.edge_violation)
    }
}

/// Checks `Q_i ⪯ 0` and the zero first row and column of `Q_i`.
pub fn check_local_structure(ctrl: &LocalController) -> Result<LocalStructureReport, CertificationError> {
    let q = dyn3(&ctrl.q_local);
    let tolerance = psd_tolerance(q.norm());
    let eig = linalg::sym_eig(&q)?;
    let q_smallest_abs_eig = eig.values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let edge_violation = (0..3).map(|j| ctrl.q_local[(0, j)].abs().max(ctrl.q_local[(j, 0)].abs())).fold(0.0, f64::max);
    let q_max_eig = eig.max();
    Ok(LocalStructureReport {
        q_max_eig,
        q_smallest_abs_eig,
        q11: ctrl.q_local[(0, 0)],
        edge_violation,
        tolerance,
        passed: q_max_eig <= tolerance && edge_violation <= tolerance,
    })
}

/// Laplacian-like coupling matrix `L = M + G` of the proof of global stability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Laplacian {
    /// Diagonal part, `M_ii = −2 Σ_j η̃_ij`.
    pub m: DMatrix<f64>,
    /// Off-diagonal part, `G_ij = η̃_ij + η̃_ji` for neighbors.
    pub g: DMatrix<f64>,
    pub l: DMatrix<f64>,
    /// Directed weights `η̃_ij = η_i / (R_ij C_ti)`, two per line.
    pub eta_tilde: Vec<EtaTilde>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaTilde {
    pub from: DguId,
    pub to: DguId,
    pub value: f64,
}

impl Laplacian {
    /// Largest `|η̃_ij − η̃_ji|` relative to the pair's magnitude.
    pub fn eta_asymmetry(&self) -> f64 {
        self.eta_tilde
            .chunks(2)
            .map(|pair| {
                let (v, w) = (pair[0].value, pair[1].value);
                (v - w).abs() / v.abs().max(w.abs()).max(1e-300)
            })
            .fold(0.0, f64::max)
    }

    pub fn max_row_sum(&self) -> f64 {
        self.l.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        let scale = self.l.amax().max(1e-300);
        (&self.l - self.l.transpose()).amax() <= 1e-12 * scale
    }
}

/// Builds `L` from arbitrary per-DGU scalings `η_i` (in topology order).
pub fn laplacian_from_etas(topology: &MicrogridTopology, etas: &[f64]) -> Laplacian {
    let n = topology.len();
    let mut m = DMatrix::zeros(n, n);
    let mut g = DMatrix::zeros(n, n);
    let mut eta_tilde = Vec::with_capacity(2 * topology.lines().len());
    let dgus = topology.dgus();
    for line in topology.lines() {
        let (Some(a), Some(b)) = (topology.index_of(line.i), topology.index_of(line.j)) else {
            continue;
        };
        let forward = etas[a] / (line.r * dgus[a].params.c_t);
        let backward = etas[b] / (line.r * dgus[b].params.c_t);
        eta_tilde.push(EtaTilde { from: line.i, to: line.j, value: forward });
        eta_tilde.push(EtaTilde { from: line.j, to: line.i, value: backward });
        m[(a, a)] -= 2.0 * forward;
        m[(b, b)] -= 2.0 * backward;
        g[(a, b)] += forward + backward;
        g[(b, a)] += forward + backward;
    }
    let l = &m + &g;
    Laplacian { m, g, l, eta_tilde }
}

/// `L` under the common scaling `η_i = σ̄ C_ti`, so that `η̃_ij = σ̄ / R_ij`.
pub fn build_laplacian(topology: &MicrogridTopology, sigma_bar: SigmaBar) -> Laplacian {
    let etas: Vec<f64> = topology.dgus().iter().map(|d| sigma_bar.get() * d.params.c_t).collect();
    laplacian_from_etas(topology, &etas)
}

/// Global closed loop `Â + B̂K` for gains given in topology order.
pub fn closed_loop_matrix(system: &GlobalSystem, gains: &[RowVector3<f64>]) -> DMatrix<f64> {
    let n = gains.len();
    let mut k = DMatrix::zeros(n, 3 * n);
    for (i, gain) in gains.iter().enumerate() {
        k.fixed_view_mut::<1, 3>(i, 3 * i).copy_from(gain);
    }
    &system.a_hat + &system.b_hat * k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalChecks {
    pub a_max_eig: f64,
    pub bc_max_eig: f64,
    pub q_max_eig: f64,
    pub tolerance: f64,
    /// Largest entry of `(b) + (c)` outside the voltage rows and columns.
    pub bc_off_voltage: f64,
    /// `‖compress((b) + (c)) − L‖_max`.
    pub bc_vs_laplacian: f64,
    /// Deviation of block `(b)` from `2 Â_ξi P_i`.
    pub b_formula_error: f64,
    /// Deviation of block `(c)` from `P_i Â_ij + Â_jiᵀ P_j`.
    pub c_formula_error: f64,
    pub eta_asymmetry: f64,
    pub laplacian_row_sum: f64,
}

impl GlobalChecks {
    pub fn q_nsd(&self) -> bool {
        self.q_max_eig <= self.tolerance
    }

    pub fn passed(&self) -> bool {
        self.a_max_eig <= self.tolerance
            && self.bc_max_eig <= self.tolerance
            && self.q_nsd()
            && self.bc_off_voltage == 0.0
            && self.bc_vs_laplacian <= FORMULA_REL_TOL
            && self.b_formula_error <= FORMULA_REL_TOL
            && self.c_formula_error <= FORMULA_REL_TOL
            && self.eta_asymmetry <= FORMULA_REL_TOL
    }
}

/// Everything needed to argue global stability, evaluated numerically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalCertificate {
    pub ids: Vec<DguId>,
    pub sigma_bar: f64,
    pub p_global: DMatrix<f64>,
    pub closed_loop: DMatrix<f64>,
    pub q_global: DMatrix<f64>,
    pub block_a: DMatrix<f64>,
    pub block_b: DMatrix<f64>,
    pub block_c: DMatrix<f64>,
    pub laplacian: Laplacian,
    pub q_eigenvalues: Vec<f64>,
    pub closed_loop_eigenvalues: Vec<Complex64>,
    pub kernel_basis: DMatrix<f64>,
    pub k3: Vec<f64>,
    pub deltas: Vec<f64>,
    pub checks: GlobalChecks,
}

fn ordered<'a>(
    controllers: &'a ControllerSet,
    topology: &MicrogridTopology,
) -> Result<Vec<&'a LocalController>, CertificationError> {
    topology.ids().into_iter().map(|id| controllers.get(&id).ok_or(CertificationError::MissingController(id))).collect()
}

fn compress_voltage(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() / 3;
    DMatrix::from_fn(n, n, |i, j| m[(3 * i, 3 * j)])
}

/// Assembles `P`, `Q` and the three-way split of `Q`, and checks each piece.
pub fn check_global(
    controllers: &ControllerSet,
    topology: &MicrogridTopology,
    sigma_bar: SigmaBar,
) -> Result<GlobalCertificate, CertificationError> {
    let locals = ordered(controllers, topology)?;
    for ctrl in &locals {
        if ctrl.sigma_bar != sigma_bar.get() {
            return Err(CertificationError::MixedSigmaBar(sigma_bar.get(), ctrl.sigma_bar));
        }
    }
    let system = assemble_global(topology)?;
    let n = topology.len();
    let mut p_global = DMatrix::zeros(3 * n, 3 * n);
    for (i, ctrl) in locals.iter().enumerate() {
        p_global.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(&ctrl.p);
    }
    let gains: Vec<_> = locals.iter().map(|c| c.k).collect();
    let closed_loop = closed_loop_matrix(&system, &gains);
    let q_global = closed_loop.transpose() * &p_global + &p_global * &closed_loop;

    let dec = &system.decomposition;
    let a_local = &dec.a_d
        + &system.b_hat * {
            let mut k = DMatrix::zeros(n, 3 * n);
            for (i, gain) in gains.iter().enumerate() {
                k.fixed_view_mut::<1, 3>(i, 3 * i).copy_from(gain);
            }
            k
        };
    let block_a = a_local.transpose() * &p_global + &p_global * &a_local;
    let block_b = dec.a_xi.transpose() * &p_global + &p_global * &dec.a_xi;
    let block_c = dec.a_c.transpose() * &p_global + &p_global * &dec.a_c;
    let block_bc = &block_b + &block_c;

    let etas: Vec<f64> = locals.iter().map(|c| c.eta).collect();
    let laplacian = laplacian_from_etas(topology, &etas);

    let mut b_formula_error: f64 = 0.0;
    let mut c_formula_error: f64 = 0.0;
    for i in 0..n {
        let xi = dec.a_xi.fixed_view::<3, 3>(3 * i, 3 * i).into_owned();
        let expected = 2.0 * xi * locals[i].p;
        let got = block_b.fixed_view::<3, 3>(3 * i, 3 * i).into_owned();
        b_formula_error = b_formula_error.max((got - expected).amax());
        for j in 0..n {
            if i == j {
                continue;
            }
            let a_ij = dec.a_c.fixed_view::<3, 3>(3 * i, 3 * j).into_owned();
            let a_ji = dec.a_c.fixed_view::<3, 3>(3 * j, 3 * i).into_owned();
            let expected = locals[i].p * a_ij + a_ji.transpose() * locals[j].p;
            let got = block_c.fixed_view::<3, 3>(3 * i, 3 * j).into_owned();
            c_formula_error = c_formula_error.max((got - expected).amax());
        }
    }
    let scale = block_bc.amax().max(1.0);
    let bc_off_voltage = (0..3 * n)
        .flat_map(|r| (0..3 * n).map(move |c| (r, c)))
        .filter(|(r, c)| r % 3 != 0 || c % 3 != 0)
        .map(|(r, c)| block_bc[(r, c)].abs())
        .fold(0.0, f64::max);
    let bc_vs_laplacian = (compress_voltage(&block_bc) - &laplacian.l).amax() / scale;

    let q_eig = linalg::sym_eig(&q_global)?;
    let tolerance = psd_tolerance(q_global.norm());
    let checks = GlobalChecks {
        a_max_eig: linalg::max_eig(&block_a)?,
        bc_max_eig: linalg::max_eig(&block_bc)?,
        q_max_eig: q_eig.max(),
        tolerance,
        bc_off_voltage,
        bc_vs_laplacian,
        b_formula_error: b_formula_error / scale,
        c_formula_error: c_formula_error / scale,
        eta_asymmetry: laplacian.eta_asymmetry(),
        laplacian_row_sum: laplacian.max_row_sum(),
    };

    let kernel_cut = KERNEL_REL_TOL * linalg::norm2(&q_global);
    let kernel_cols: Vec<usize> = (0..q_eig.values.len()).filter(|&i| q_eig.values[i].abs() <= kernel_cut).collect();
    let mut kernel_basis = DMatrix::zeros(3 * n, kernel_cols.len());
    for (dst, &src) in kernel_cols.iter().enumerate() {
        kernel_basis.set_column(dst, &q_eig.vectors.column(src));
    }

    Ok(GlobalCertificate {
        ids: topology.ids(),
        sigma_bar: sigma_bar.get(),
        closed_loop_eigenvalues: linalg::general_eig(&closed_loop)?,
        p_global,
        closed_loop,
        q_global,
        block_a,
        block_b,
        block_c,
        laplacian,
        q_eigenvalues: q_eig.values.iter().copied().collect(),
        kernel_basis,
        k3: locals.iter().map(|c| c.k[2]).collect(),
        deltas: locals.iter().map(|c| c.delta).collect(),
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reasons", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail(Vec<String>),
    /// The network is not connected, so the stability claim does not apply.
    HypothesisUnmet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub verdict: Verdict,
    pub spectral_abscissa: f64,
    pub stability_margin: f64,
}

fn abscissa(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

fn stability_threshold(closed_loop: &DMatrix<f64>) -> f64 {
    1e-9 * linalg::norm2(closed_loop)
}

/// Asymptotic stability verdict from the certificate's hypotheses and the closed-loop spectrum.
pub fn check_theorem1(cert: &GlobalCertificate, topology: &MicrogridTopology) -> Theorem1Report {
    let spectral_abscissa = abscissa(&cert.closed_loop_eigenvalues);
    let stability_margin = stability_threshold(&cert.closed_loop);
    if !topology.is_connected() {
        return Theorem1Report { verdict: Verdict::HypothesisUnmet, spectral_abscissa, stability_margin };
    }
    let mut reasons = Vec::new();
    for (id, k3) in cert.ids.iter().zip(&cert.k3) {
        if *k3 == 0.0 || !k3.is_finite() {
            reasons.push(format!("DGU {id}: k3 vanishes"));
        }
    }
    if !cert.checks.q_nsd() {
        reasons.push(format!("Q has positive eigenvalue {:.3e}", cert.checks.q_max_eig));
    }
    if spectral_abscissa >= -stability_margin {
        reasons.push(format!("spectral abscissa {spectral_abscissa:.6e} is not negative"));
    }
    let verdict = if reasons.is_empty() { Verdict::Pass } else { Verdict::Fail(reasons) };
    Theorem1Report { verdict, spectral_abscissa, stability_margin }
}

/// Verdict for gains that come without a structured Lyapunov certificate (e.g. LQR designs).
pub fn check_gains_only(
    topology: &MicrogridTopology,
    gains: &BTreeMap<DguId, RowVector3<f64>>,
) -> Result<Theorem1Report, CertificationError> {
    let system = assemble_global(topology)?;
    let ordered: Vec<_> = topology
        .ids()
        .into_iter()
        .map(|id| gains.get(&id).copied().ok_or(CertificationError::MissingController(id)))
        .collect::<Result<_, _>>()?;
    let closed_loop = closed_loop_matrix(&system, &ordered);
    let eigs = linalg::general_eig(&closed_loop)?;
    let spectral_abscissa = abscissa(&eigs);
    let stability_margin = stability_threshold(&closed_loop);
    if !topology.is_connected() {
        return Ok(Theorem1Report { verdict: Verdict::HypothesisUnmet, spectral_abscissa, stability_margin });
    }
    let mut reasons = vec!["no structured Lyapunov certificate supplied".to_string()];
    for (id, k) in topology.ids().iter().zip(&ordered) {
        if k[2].abs() <= K3_REL_TOL * k.norm() {
            reasons.push(format!("DGU {id}: k3 vanishes"));
        }
    }
    if spectral_abscissa >= -stability_margin {
        reasons.push(format!("spectral abscissa {spectral_abscissa:.6e} is not negative"));
    }
    Ok(Theorem1Report { verdict: Verdict::Fail(reasons), spectral_abscissa, stability_margin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub nullity: usize,
    pub expected_nullity: usize,
    /// Largest principal angle between computed and predicted kernels (rad).
    pub angle: f64,
    pub passed: bool,
}

/// Predicted kernel of `Q`: a voltage vector shared by all DGUs, plus `[0, 1, δ_i]` in each block.
pub fn predicted_kernel(deltas: &[f64]) -> DMatrix<f64> {
    let n = deltas.len();
    let mut gens = DMatrix::zeros(3 * n, n + 1);
    for i in 0..n {
        gens[(3 * i, 0)] = 1.0;
        gens[(3 * i + 1, i + 1)] = 1.0;
        gens[(3 * i + 2, i + 1)] = deltas[i];
    }
    linalg::orthonormal_basis(&gens, 1e-12)
}

/// Compares the numerical kernel of `Q` with the predicted generators.
pub fn check_lasalle_kernel(cert: &GlobalCertificate) -> KernelReport {
    let predicted = predicted_kernel(&cert.deltas);
    let nullity = cert.kernel_basis.ncols();
    let expected_nullity = predicted.ncols();
    let angle = linalg::max_principal_angle(&cert.kernel_basis, &predicted);
    KernelReport { nullity, expected_nullity, angle, passed: nullity == expected_nullity && angle <= KERNEL_ANGLE_TOL }
}
