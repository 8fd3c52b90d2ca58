//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use gridforge::baselines::{destabilization_demo, match_spectrum, reference, to_complex, DesignMethod, TWO_DGU_POLES};
use gridforge::certification::{check_global, check_lasalle_kernel, check_theorem1, ControllerSet, Verdict};
use gridforge::model::augmented_local;
use gridforge::scenario::{Event, LineModel, Scenario};
use gridforge::simulator::{simulate, ControllerSource, EventOutcome, Trajectory};
use gridforge::sweep::{run_sweep, PointStatus, GREEN_BOX};
use gridforge::synthesis::{
    assemble_problem, synthesize_filter, verify_k1_identity, K1Residual, LocalController, SigmaBar, SynthesisConfig,
    DEFAULT_ALPHAS,
};
use gridforge_lmi::solver::epsilon_psd;
use gridforge_lmi::{solve, sym_eig, LmiBlock, LmiProgram, Sense, SolveStatus, SolverOptions};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPECTRUM_REL_TOL: f64 = 0.01;
const PLACEMENT_REL_TOL: f64 = 1e-6;
const ROW_SUM_TOL: f64 = 1e-9;
const KERNEL_ANGLE_TOL: f64 = 1e-6;
const IDENTITY_REL_TOL: f64 = 1e-6;
const SETTLE_BAND: f64 = 1e-3;
const SETTLE_WINDOW: f64 = 2.0;
const LINE_MODEL_REL_TOL: f64 = 1e-6;
const SDP_REL_TOL: f64 = 1e-6;
const TOPOLOGY_COUNT: usize = 50;
const SDP_COUNT: usize = 20;

struct Outcome {
    passed: bool,
    detail: String,
}

fn criterion(number: u32, title: &str, limit: Option<Duration>, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut outcome = run();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            outcome.passed = false;
            outcome.detail.push_str(&format!("; runtime over {:.0} s", limit.as_secs_f64()));
        }
    }
    let verdict = if outcome.passed { "PASS" } else { "FAIL" };
    println!("{verdict} {number}. {title}: {} [{:.2} s]", outcome.detail, elapsed.as_secs_f64());
    outcome.passed
}

fn fmt_complex(z: Complex64) -> String {
    if z.im.abs() < 1e-9 * z.norm().max(1.0) {
        format!("{:.4}", z.re)
    } else {
        format!("{:.4}{:+.4}i", z.re, z.im)
    }
}

fn spectrum_line(method: DesignMethod, published: &[(f64, f64)]) -> Outcome {
    let report = destabilization_demo(method).expect("two-DGU design");
    let m = match_spectrum(&report.coupled, &to_complex(published), SPECTRUM_REL_TOL);
    let worst = m
        .pairs
        .iter()
        .filter(|(c, r, e)| *e > SPECTRUM_REL_TOL || c.re.signum() != r.re.signum())
        .map(|(c, r, e)| format!("{} vs {} ({:.2}%)", fmt_complex(*c), fmt_complex(*r), 100.0 * e))
        .collect::<Vec<_>>();
    Outcome {
        passed: m.passed,
        detail: if worst.is_empty() {
            format!("coupled spectrum within {:.2}%", 100.0 * m.max_relative_error)
        } else {
            format!("coupled eigenvalues off: {}", worst.join(", "))
        },
    }
}

fn lqr_reproduction() -> Outcome {
    let report = destabilization_demo(DesignMethod::Lqr).expect("LQR design");
    let mut passed = true;
    let mut notes = Vec::new();
    for (i, (computed, published)) in report.decoupled.iter().zip(reference::LQR_DECOUPLED).enumerate() {
        let m = match_spectrum(computed, &to_complex(&published), SPECTRUM_REL_TOL);
        passed &= m.passed;
        notes.push(format!("DGU {} decoupled within {:.2}%", i + 1, 100.0 * m.max_relative_error));
    }
    let coupled = spectrum_line(DesignMethod::Lqr, &reference::LQR_COUPLED);
    notes.push(coupled.detail);
    Outcome { passed: passed && coupled.passed, detail: notes.join("; ") }
}

fn placement_reproduction() -> Outcome {
    let report = destabilization_demo(DesignMethod::PolePlacement).expect("placement design");
    let mut passed = true;
    let mut worst: f64 = 0.0;
    for (computed, targets) in report.decoupled.iter().zip(TWO_DGU_POLES) {
        let targets: Vec<_> = targets.iter().map(|&p| Complex64::new(p, 0.0)).collect();
        let m = match_spectrum(computed, &targets, PLACEMENT_REL_TOL);
        passed &= m.passed;
        worst = worst.max(m.max_relative_error);
    }
    let coupled = spectrum_line(DesignMethod::PolePlacement, &reference::PLACEMENT_COUPLED);
    Outcome { passed: passed && coupled.passed, detail: format!("targets met to {worst:.1e}; {}", coupled.detail) }
}

fn green_box_sweep(controllers: &mut Vec<LocalController>) -> Outcome {
    let result = run_sweep(&GREEN_BOX, 10.0, DEFAULT_ALPHAS).expect("valid sweep settings");
    let summary = result.summary();
    let certified = result.points.iter().filter(|p| p.status == PointStatus::Feasible && p.certified).count();
    let cfg = SynthesisConfig::new(10.0).unwrap();
    for p in &result.points {
        if let Ok(outcome) = synthesize_filter(&p.filter, &cfg) {
            controllers.extend(outcome.controller().cloned());
        }
    }
    Outcome {
        passed: summary.feasible == summary.total && certified == summary.total,
        detail: format!(
            "{}/{} feasible, {} certified, {} denied, {} failures",
            summary.feasible, summary.total, certified, summary.infeasible, summary.failures
        ),
    }
}

fn theorem_one_suite(controllers_out: &mut Vec<LocalController>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let sigmas = [1.0, 10.0, 100.0];
    let mut failures = Vec::new();
    let (mut worst_row, mut worst_angle, mut worst_abscissa) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for case in 0..TOPOLOGY_COUNT {
        let n = rng.gen_range(2..=10);
        let sigma_bar = sigmas[case % sigmas.len()];
        let topology = common::random_connected(&mut rng, n);
        let cfg = SynthesisConfig::new(sigma_bar).unwrap();
        let mut controllers = ControllerSet::new();
        for d in topology.dgus() {
            match synthesize_filter(&d.params.filter(), &cfg) {
                Ok(o) if o.controller().is_some() => {
                    controllers.insert(d.id, o.controller().cloned().unwrap());
                }
                other => failures.push(format!("case {case}: DGU {} not synthesized ({other:?})", d.id)),
            }
        }
        if controllers.len() != n {
            continue;
        }
        let cert = match check_global(&controllers, &topology, SigmaBar::new(sigma_bar).unwrap()) {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let theorem = check_theorem1(&cert, &topology);
        let kernel = check_lasalle_kernel(&cert);
        let row = cert.laplacian.max_row_sum();
        worst_row = worst_row.max(row);
        worst_angle = worst_angle.max(kernel.angle);
        worst_abscissa = worst_abscissa.max(theorem.spectral_abscissa);
        if !cert.checks.q_nsd() {
            failures.push(format!("case {case}: Q max eig {:.2e}", cert.checks.q_max_eig));
        }
        if theorem.verdict != Verdict::Pass || theorem.spectral_abscissa >= 0.0 {
            failures.push(format!("case {case}: {:?}", theorem.verdict));
        }
        if row > ROW_SUM_TOL {
            failures.push(format!("case {case}: row sum {row:.2e}"));
        }
        if kernel.nullity != n + 1 || kernel.angle > KERNEL_ANGLE_TOL {
            failures.push(format!(
                "case {case}: nullity {} (want {}), angle {:.2e}",
                kernel.nullity,
                n + 1,
                kernel.angle
            ));
        }
        controllers_out.extend(controllers.into_values());
    }
    Outcome {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!(
                "{TOPOLOGY_COUNT} topologies; worst abscissa {worst_abscissa:.3e}, row sum {worst_row:.1e}, kernel angle {worst_angle:.1e}"
            )
        } else {
            failures.join("; ")
        },
    }
}

fn structural_identities(controllers: &[LocalController]) -> Outcome {
    let (mut null_worst, mut p_worst, mut k1_worst) = (0.0f64, 0.0f64, 0.0f64);
    let mut k1_soft = 0;
    for c in controllers {
        let q22 = Matrix2::new(c.q_local[(1, 1)], c.q_local[(1, 2)], c.q_local[(2, 1)], c.q_local[(2, 2)]);
        let q_norm = q22.symmetric_eigenvalues().amax();
        null_worst = null_worst.max((q22 * Vector2::new(1.0, c.delta)).norm() / q_norm);
        let f22 = (c.k[1] - c.filter.r_t) / c.filter.l_t;
        if f22.abs() > 1e-9 {
            p_worst = p_worst.max((c.p[(1, 1)] + c.delta * c.p[(1, 2)]).abs() / c.p[(1, 1)].abs());
        }
        if let K1Residual::Value(r) = verify_k1_identity(c) {
            let rel = r / (1.0 + c.k[0].abs());
            k1_worst = k1_worst.max(rel);
            if rel > IDENTITY_REL_TOL {
                k1_soft += 1;
            }
        }
    }
    Outcome {
        passed: null_worst <= IDENTITY_REL_TOL && p_worst <= IDENTITY_REL_TOL && k1_soft == 0,
        detail: format!(
            "{} controllers; worst Q22[1;δ] {null_worst:.1e}, p22+δp23 {p_worst:.1e}, k1 residual {k1_worst:.1e} ({k1_soft} over tolerance)",
            controllers.len()
        ),
    }
}

fn settle_report(traj: &Trajectory, scenario: &Scenario) -> (Vec<String>, f64) {
    let mut problems = Vec::new();
    let mut slowest: f64 = 0.0;
    for (k, record) in traj.events.iter().enumerate() {
        if !matches!(scenario.events[k].event, Event::LoadStep { .. } | Event::Unplug { .. }) {
            continue;
        }
        let until = traj.events.get(k + 1).map_or(scenario.t_end, |e| e.t);
        for id in traj.final_state.topology.ids() {
            if let Some(t) = traj.last_excursion(id, record.t, until + 1e-12, SETTLE_BAND) {
                slowest = slowest.max(t - record.t);
                if t > record.t + SETTLE_WINDOW {
                    problems.push(format!(
                        "DGU {id} still {:.1e}·v_ref away {:.2} s after t = {}",
                        SETTLE_BAND,
                        t - record.t,
                        record.t
                    ));
                }
            }
        }
    }
    (problems, slowest)
}

fn meshed_scenario(line_model: LineModel) -> (Scenario, Trajectory, Duration) {
    let mut s = Scenario::meshed_six_dgu();
    s.line_model = line_model;
    let start = Instant::now();
    let traj = simulate(&s, ControllerSource::Auto).expect("scenario runs");
    (s, traj, start.elapsed())
}

fn meshed_scenario_properties(runs: &mut Option<(Trajectory, Trajectory)>) -> Outcome {
    let (scenario, traj, elapsed) = meshed_scenario(LineModel::Qsl);
    let mut problems = Vec::new();
    let plug = &traj.events[0];
    if plug.outcome != EventOutcome::Accepted || plug.others_unchanged != Some(true) {
        problems.push(format!("plug-in: {:?}, others unchanged {:?}", plug.outcome, plug.others_unchanged));
    }
    for e in &traj.events[1..] {
        if !matches!(e.outcome, EventOutcome::Applied | EventOutcome::Accepted) {
            problems.push(format!("{} at t = {}: {:?}", e.event, e.t, e.outcome));
        }
    }
    if let Some(t) = traj.diverged_at {
        problems.push(format!("diverged at t = {t}"));
    }
    let finite = traj
        .series
        .values()
        .all(|s| s.voltage.iter().chain(&s.filter_current).chain(&s.integrator).all(|v| v.is_nan() || v.is_finite()));
    if !finite {
        problems.push("non-finite sample".into());
    }
    let (settle, slowest) = settle_report(&traj, &scenario);
    problems.extend(settle);
    if elapsed > Duration::from_secs(120) {
        problems.push(format!("simulation took {:.1} s", elapsed.as_secs_f64()));
    }
    let (_, rl, _) = meshed_scenario(LineModel::Rl);
    *runs = Some((traj, rl));
    Outcome {
        passed: problems.is_empty(),
        detail: if problems.is_empty() {
            format!(
                "plug-in accepted, neighbours bitwise unchanged; slowest settle {slowest:.2} s; simulation {:.1} s",
                elapsed.as_secs_f64()
            )
        } else {
            problems.join("; ")
        },
    }
}

fn dgu_states(traj: &Trajectory) -> DVector<f64> {
    let n = traj.final_layout.ids.len();
    traj.final_x.rows(0, 3 * n).into_owned()
}

fn line_model_agreement(runs: &Option<(Trajectory, Trajectory)>) -> Outcome {
    let Some((qsl, rl)) = runs else {
        return Outcome { passed: false, detail: "scenario runs unavailable".into() };
    };
    let (a, b) = (dgu_states(qsl), dgu_states(rl));
    let rel = (0..a.len()).map(|i| (a[i] - b[i]).abs() / a[i].abs().max(1.0)).fold(0.0, f64::max);
    Outcome {
        passed: rel <= LINE_MODEL_REL_TOL && qsl.final_layout.ids == rl.final_layout.ids,
        detail: format!("final DGU states differ by {rel:.1e} relative"),
    }
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    m.qr().q()
}

/// Tiny SDPs whose optimum is known by construction.
fn known_sdp(rng: &mut ChaCha8Rng, kind: usize) -> (LmiProgram, f64) {
    let n = rng.gen_range(2..=4);
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let q = random_orthogonal(rng, n);
    let a = &q * DMatrix::from_diagonal(&DVector::from_vec(values.clone())) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let block = |constant: DMatrix<f64>, coeff: DMatrix<f64>| LmiBlock {
        label: "known".into(),
        constant,
        coeffs: vec![coeff],
        sense: Sense::Psd,
        strict: false,
    };
    let eye = DMatrix::identity(n, n);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    match kind % 3 {
        0 => {
            let mut p = LmiProgram::new(1).with_objective(vec![1.0]);
            p.push_block(block(-a, eye));
            (p, max)
        }
        1 => {
            let mut p = LmiProgram::new(1).with_objective(vec![-1.0]);
            p.push_block(block(a, -eye));
            (p, -min)
        }
        _ => {
            // Spectral norm of U diag(σ) Vᵀ is max σ.
            let sigmas: Vec<f64> = values.iter().map(|v| v.abs()).collect();
            let v = random_orthogonal(rng, n);
            let m = &q * DMatrix::from_diagonal(&DVector::from_vec(sigmas.clone())) * v.transpose();
            let mut constant = DMatrix::zeros(2 * n, 2 * n);
            constant.view_mut((0, n), (n, n)).copy_from(&m);
            constant.view_mut((n, 0), (n, n)).copy_from(&m.transpose());
            let mut p = LmiProgram::new(1).with_objective(vec![1.0]);
            p.push_block(block(constant, DMatrix::identity(2 * n, 2 * n)));
            (p, sigmas.iter().copied().fold(0.0, f64::max))
        }
    }
}

fn margins_hold(program: &LmiProgram, x: &[f64]) -> (bool, f64) {
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for b in &program.blocks {
        let slack = b.slack(x);
        let min = sym_eig(&slack).map(|e| e.min()).unwrap_or(f64::NAN);
        worst = worst.min(min);
        ok &= min >= -epsilon_psd(&slack);
    }
    (ok, worst)
}

fn solver_soundness() -> Outcome {
    let options = SolverOptions::default();
    let mut problems = Vec::new();
    let mut verified = 0;
    let cfg = SynthesisConfig::new(10.0).unwrap();
    for filter in GREEN_BOX.points() {
        let program = assemble_problem(&augmented_local(&filter).unwrap(), &filter, &cfg).unwrap();
        let sol = solve(&program, &options).unwrap();
        if sol.status.is_feasible() {
            verified += 1;
            if !margins_hold(&program, &sol.x).0 {
                problems.push(format!("margin violated at {filter:?}"));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_err: f64 = 0.0;
    for kind in 0..SDP_COUNT {
        let (program, optimum) = known_sdp(&mut rng, kind);
        let sol = solve(&program, &options).unwrap();
        if sol.status != SolveStatus::Optimal {
            problems.push(format!("SDP {kind}: {:?}", sol.status));
            continue;
        }
        verified += 1;
        let err = (sol.objective_value - optimum).abs() / (1.0 + optimum.abs());
        worst_err = worst_err.max(err);
        if err > SDP_REL_TOL {
            problems.push(format!("SDP {kind}: objective off by {err:.1e}"));
        }
        if !margins_hold(&program, &sol.x).0 {
            problems.push(format!("SDP {kind}: margin violated"));
        }
    }
    Outcome {
        passed: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("{verified} feasible solutions re-verified; {SDP_COUNT} known optima within {worst_err:.1e}")
        } else {
            problems.join("; ")
        },
    }
}

fn main() {
    let mut results = Vec::new();
    results.push(criterion(1, "LQR destabilization reproduction", Some(Duration::from_secs(1)), lqr_reproduction));
    results.push(criterion(
        2,
        "pole-placement destabilization reproduction",
        Some(Duration::from_secs(1)),
        placement_reproduction,
    ));
    let mut controllers = Vec::new();
    results.push(criterion(3, "green-box feasibility at sigma_bar = 10", Some(Duration::from_secs(60)), || {
        green_box_sweep(&mut controllers)
    }));
    results
        .push(criterion(4, "stability certificate on random topologies", None, || theorem_one_suite(&mut controllers)));
    results.push(criterion(5, "structural identities of synthesized controllers", None, || {
        structural_identities(&controllers)
    }));
    let mut runs = None;
    results.push(criterion(6, "six-DGU plug-and-play scenario", None, || meshed_scenario_properties(&mut runs)));
    results.push(criterion(7, "resistive vs inductive line models", None, || line_model_agreement(&runs)));
    results.push(criterion(8, "solver soundness", None, solver_soundness));
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
