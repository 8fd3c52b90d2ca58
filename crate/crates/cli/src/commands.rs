use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use gridforge::baselines::{
    destabilization_demo, match_spectrum, reference, to_complex, DesignMethod, SpectrumMatch, TWO_DGU_POLES,
};
use gridforge::certification::{
    check_gains_only, check_global, check_lasalle_kernel, check_local_structure, check_theorem1, GlobalChecks,
    KernelReport, Verdict as StabilityVerdict,
};
use gridforge::model::{DguId, FilterParams};
use gridforge::scenario::{Event, LineModel, Scenario};
use gridforge::simulator::{simulate as run_simulation, Controller, ControllerSource, EventOutcome};
use gridforge::sweep::{run_points, run_sweep, SweepGrid, SweepResult};
use gridforge::synthesis::{synthesize_dgus, DenialReason, SigmaBar, SynthesisOutcome};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bundle::{ControllerBundle, ControllerEntry, Denial};
use crate::error::CliError;
use crate::Verdict;

const SPECTRUM_REL_TOL: f64 = 0.01;
const PLACEMENT_REL_TOL: f64 = 1e-6;

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub struct ScenarioOverrides {
    pub sigma_bar: Option<f64>,
    pub dt: Option<f64>,
    pub line_model: Option<LineModel>,
}

fn load_scenario(path: &Path, overrides: &ScenarioOverrides) -> Result<Scenario, CliError> {
    let mut scenario = Scenario::load(path)?;
    if let Some(s) = overrides.sigma_bar {
        scenario.sigma_bar = s;
    }
    if let Some(dt) = overrides.dt {
        scenario.dt = Some(dt);
    }
    if let Some(m) = overrides.line_model {
        scenario.line_model = m;
    }
    scenario.validate()?;
    Ok(scenario)
}

pub fn synth(path: &Path, sigma_bar: Option<f64>, out: Option<&Path>) -> Result<Verdict, CliError> {
    let scenario = load_scenario(path, &ScenarioOverrides { sigma_bar, dt: None, line_model: None })?;
    let cfg = scenario.synthesis_config()?;
    let mut dgus = scenario.dgus.clone();
    dgus.extend(scenario.events.iter().filter_map(|e| match &e.event {
        Event::PlugIn { dgu, .. } => Some(*dgu),
        _ => None,
    }));

    let mut bundle = ControllerBundle { sigma_bar: Some(cfg.sigma_bar.get()), controllers: vec![], denied: vec![] };
    let mut failure = None;
    for (id, result) in synthesize_dgus(&dgus, &cfg) {
        match result {
            Ok(SynthesisOutcome::Accepted(ctrl)) => bundle.controllers.push(ControllerEntry::from_certified(id, &ctrl)),
            Ok(SynthesisOutcome::Denied(reason)) => {
                eprintln!("DGU {id} denied: {reason}");
                if matches!(reason, DenialReason::VanishingIntegratorGain { .. }) {
                    eprintln!("  hint: change the cost weights (`alphas` in the scenario) and synthesize again");
                }
                bundle.denied.push(Denial { dgu_id: id, reason: reason.to_string() });
            }
            Err(e) => {
                eprintln!("DGU {id}: {e}");
                failure.get_or_insert(e);
            }
        }
    }
    if let Some(e) = failure {
        return Err(e.into());
    }
    emit(out, &bundle.to_json())?;
    eprintln!("{} controllers, {} denied", bundle.controllers.len(), bundle.denied.len());
    Ok(if bundle.denied.is_empty() { Verdict::Positive } else { Verdict::Negative })
}

#[derive(Debug, Serialize)]
struct LocalSummary {
    dgu_id: DguId,
    passed: bool,
    q_max_eig: f64,
    max_violation: f64,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum CertificateMode {
    Structured,
    GainsOnly,
}

#[derive(Debug, Serialize)]
struct CertificateReport {
    theorem1: &'static str,
    mode: CertificateMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_bar: Option<f64>,
    spectral_abscissa: f64,
    stability_margin: f64,
    reasons: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    local: Vec<LocalSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    global_checks: Option<GlobalChecks>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<KernelReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    q_eigenvalues: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    closed_loop_eigenvalues: Vec<[f64; 2]>,
}

fn verdict_label(v: &StabilityVerdict) -> (&'static str, Vec<String>) {
    match v {
        StabilityVerdict::Pass => ("pass", vec![]),
        StabilityVerdict::Fail(reasons) => ("fail", reasons.clone()),
        StabilityVerdict::HypothesisUnmet => ("hypothesis_unmet", vec!["network is not connected".into()]),
    }
}

pub fn certify(
    scenario_path: &Path,
    bundle_path: &Path,
    sigma_bar: Option<f64>,
    out: Option<&Path>,
) -> Result<Verdict, CliError> {
    let scenario = Scenario::load(scenario_path)?;
    let topology = scenario.topology()?;
    let bundle = ControllerBundle::load(bundle_path)?;
    let filters: BTreeMap<DguId, FilterParams> = topology.dgus().iter().map(|d| (d.id, d.params.filter())).collect();
    let controllers = bundle.controllers(&filters)?;

    let mut certified = BTreeMap::new();
    let mut gains = BTreeMap::new();
    for (id, ctrl) in &controllers {
        gains.insert(*id, ctrl.gain());
        if let Controller::Certified(c) = ctrl {
            certified.insert(*id, (**c).clone());
        }
    }

    let report = if certified.len() == controllers.len() && !certified.is_empty() {
        let reference =
            sigma_bar.or(bundle.sigma_bar).unwrap_or_else(|| certified.values().next().expect("nonempty").sigma_bar);
        let sigma_bar = SigmaBar::new(reference)?;
        let cert = check_global(&certified, &topology, sigma_bar)?;
        let theorem = check_theorem1(&cert, &topology);
        let mut local = Vec::new();
        for (id, ctrl) in &certified {
            let r = check_local_structure(ctrl)?;
            local.push(LocalSummary {
                dgu_id: *id,
                passed: r.passed,
                q_max_eig: r.q_max_eig,
                max_violation: r.max_violation(),
            });
        }
        let (label, reasons) = verdict_label(&theorem.verdict);
        CertificateReport {
            theorem1: label,
            mode: CertificateMode::Structured,
            sigma_bar: Some(reference),
            spectral_abscissa: theorem.spectral_abscissa,
            stability_margin: theorem.stability_margin,
            reasons,
            local,
            kernel: Some(check_lasalle_kernel(&cert)),
            global_checks: Some(cert.checks),
            q_eigenvalues: cert.q_eigenvalues,
            closed_loop_eigenvalues: cert.closed_loop_eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
        }
    } else {
        let theorem = check_gains_only(&topology, &gains)?;
        let (label, reasons) = verdict_label(&theorem.verdict);
        CertificateReport {
            theorem1: label,
            mode: CertificateMode::GainsOnly,
            sigma_bar: None,
            spectral_abscissa: theorem.spectral_abscissa,
            stability_margin: theorem.stability_margin,
            reasons,
            local: vec![],
            global_checks: None,
            kernel: None,
            q_eigenvalues: vec![],
            closed_loop_eigenvalues: vec![],
        }
    };

    eprintln!("theorem1: {}, abscissa {:.6e}", report.theorem1, report.spectral_abscissa);
    for reason in &report.reasons {
        eprintln!("  {reason}");
    }
    emit(out, &to_json(&report))?;
    Ok(if report.theorem1 == "pass" { Verdict::Positive } else { Verdict::Negative })
}

pub fn simulate(
    scenario_path: &Path,
    out_dir: &Path,
    overrides: ScenarioOverrides,
    bundle_path: Option<&Path>,
) -> Result<Verdict, CliError> {
    let scenario = load_scenario(scenario_path, &overrides)?;
    let source = match bundle_path {
        Some(path) => {
            let filters = scenario.dgus.iter().map(|d| (d.id, d.params.filter())).collect();
            ControllerSource::Provided(ControllerBundle::load(path)?.controllers(&filters)?)
        }
        None => ControllerSource::Auto,
    };
    let trajectory = run_simulation(&scenario, source)?;
    create_dir(out_dir)?;
    trajectory.write_csv(create_file(&out_dir.join("trajectory.csv"))?)?;
    trajectory.write_event_log(create_file(&out_dir.join("events.jsonl"))?)?;

    eprintln!("{} samples to t = {}", trajectory.len(), trajectory.final_time);
    for e in &trajectory.events {
        let outcome = match &e.outcome {
            EventOutcome::Applied => "applied".to_string(),
            EventOutcome::Accepted => "accepted".to_string(),
            EventOutcome::Denied(why) => format!("denied: {why}"),
            EventOutcome::Failed(why) => format!("failed: {why}"),
        };
        eprintln!("t = {} {} DGU {}: {outcome}", e.t, e.event, e.dgu);
    }
    match trajectory.diverged_at {
        Some(t) => {
            eprintln!("diverged at t = {t}");
            Ok(Verdict::Negative)
        }
        None => Ok(Verdict::Positive),
    }
}

#[derive(Debug, Serialize)]
struct SpectrumTable {
    title: String,
    passed: bool,
    max_relative_error: f64,
    /// `[computed, reference, relative error]` rows, eigenvalues as `[re, im]`.
    rows: Vec<([f64; 2], [f64; 2], f64)>,
}

fn table(title: &str, m: &SpectrumMatch) -> SpectrumTable {
    SpectrumTable {
        title: title.into(),
        passed: m.passed,
        max_relative_error: m.max_relative_error,
        rows: m.pairs.iter().map(|(c, r, e)| ([c.re, c.im], [r.re, r.im], *e)).collect(),
    }
}

fn fmt_complex(z: &[f64; 2]) -> String {
    if z[1].abs() < 1e-9 * z[0].abs().max(1.0) {
        format!("{:.4}", z[0])
    } else {
        format!("{:.4}{:+.4}i", z[0], z[1])
    }
}

fn print_table(t: &SpectrumTable) {
    println!("{} [{}]", t.title, if t.passed { "PASS" } else { "FAIL" });
    println!("  {:>24}  {:>24}  {:>10}", "computed", "reference", "rel. err");
    for (c, r, e) in &t.rows {
        println!("  {:>24}  {:>24}  {:>9.3}%", fmt_complex(c), fmt_complex(r), 100.0 * e);
    }
}

pub fn appendix_a(out: Option<&Path>) -> Result<Verdict, CliError> {
    let lqr = destabilization_demo(DesignMethod::Lqr)?;
    let placement = destabilization_demo(DesignMethod::PolePlacement)?;
    let mut tables = Vec::new();
    for (i, published) in reference::LQR_DECOUPLED.iter().enumerate() {
        let m = match_spectrum(&lqr.decoupled[i], &to_complex(published), SPECTRUM_REL_TOL);
        tables.push(table(&format!("LQR, DGU {} alone", i + 1), &m));
    }
    let m = match_spectrum(&lqr.coupled, &to_complex(&reference::LQR_COUPLED), SPECTRUM_REL_TOL);
    tables.push(table("LQR, coupled", &m));
    for (i, poles) in TWO_DGU_POLES.iter().enumerate() {
        let targets: Vec<Complex64> = poles.iter().map(|p| Complex64::new(*p, 0.0)).collect();
        let m = match_spectrum(&placement.decoupled[i], &targets, PLACEMENT_REL_TOL);
        tables.push(table(&format!("pole placement, DGU {} alone (targets)", i + 1), &m));
    }
    let m = match_spectrum(&placement.coupled, &to_complex(&reference::PLACEMENT_COUPLED), SPECTRUM_REL_TOL);
    tables.push(table("pole placement, coupled", &m));

    for t in &tables {
        print_table(t);
    }
    let passed = tables.iter().all(|t| t.passed);
    println!("appendix-a: {}", if passed { "pass" } else { "fail" });

    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("appendix_a.json"), &to_json(&tables))?;
        write_text(&dir.join("scenario_two_dgu.json"), &Scenario::two_dgu().to_json())?;
        for (name, report) in [("lqr_bundle.json", &lqr), ("placement_bundle.json", &placement)] {
            let bundle = ControllerBundle {
                sigma_bar: None,
                controllers: report
                    .gains
                    .iter()
                    .enumerate()
                    .map(|(i, k)| ControllerEntry::gain_only(DguId(i as u32 + 1), k))
                    .collect(),
                denied: vec![],
            };
            write_text(&dir.join(name), &bundle.to_json())?;
        }
    }
    Ok(if passed { Verdict::Positive } else { Verdict::Negative })
}

fn sample_box(grid: &SweepGrid, count: usize, seed: u64) -> Vec<FilterParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |a: &gridforge::sweep::Axis| {
        if a.max > a.min {
            rng.gen_range(a.min..=a.max)
        } else {
            a.min
        }
    };
    (0..count).map(|_| FilterParams { r_t: draw(&grid.r_t), l_t: draw(&grid.l_t), c_t: draw(&grid.c_t) }).collect()
}

pub fn sweep(
    grid: &SweepGrid,
    sigma_bar: f64,
    samples: Option<(usize, u64)>,
    out: Option<&Path>,
) -> Result<Verdict, CliError> {
    let alphas = gridforge::synthesis::DEFAULT_ALPHAS;
    let result: SweepResult = match samples {
        Some((count, seed)) => run_points(&sample_box(grid, count, seed), sigma_bar, alphas)?,
        None => run_sweep(grid, sigma_bar, alphas)?,
    };
    let summary = result.summary();
    match out {
        Some(dir) => {
            create_dir(dir)?;
            result.write_csv(create_file(&dir.join("sweep.csv"))?).map_err(|e| CliError::Io(e.to_string()))?;
            write_text(&dir.join("summary.json"), &to_json(&summary))?;
        }
        None => {
            result.write_csv(std::io::stdout().lock()).map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    eprintln!(
        "{} points: {} feasible, {} infeasible, {} failures",
        summary.total, summary.feasible, summary.infeasible, summary.failures
    );
    Ok(Verdict::Positive)
}
