//! Closed-loop simulation through plug-in, unplug, load and reference events.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::{DMatrix, DVector, RowVector3};
use serde::{Deserialize, Serialize};

use crate::certification::closed_loop_matrix;
use crate::error::{ModelError, SimulationError};
use crate::model::{assemble_global, Dgu, DguId, LineParams, LoadModel, MicrogridTopology};
use crate::scenario::{Event, InitialCondition, LineModel, Scenario};
use crate::synthesis::{
    synthesize_dgus, synthesize_filter, DenialReason, LocalController, SynthesisConfig, SynthesisOutcome,
};

/// Any state magnitude above this aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Controller {
    /// Produced by local synthesis; carries its Lyapunov certificate.
    Certified(Box<LocalController>),
    /// Bare gain row from another design method.
    GainOnly { k: RowVector3<f64> },
}

impl Controller {
    pub fn gain(&self) -> RowVector3<f64> {
        match self {
            Controller::Certified(c) => c.k,
            Controller::GainOnly { k } => *k,
        }
    }

    pub fn certified(&self) -> Option<&LocalController> {
        match self {
            Controller::Certified(c) => Some(c),
            Controller::GainOnly { .. } => None,
        }
    }

    /// Bitwise equality of everything that determines the closed loop.
    pub fn bitwise_eq(&self, other: &Controller) -> bool {
        let bits = |c: &Controller| -> Vec<u64> {
            let mut out: Vec<u64> = c.gain().iter().map(|v| v.to_bits()).collect();
            if let Some(l) = c.certified() {
                out.extend(l.p.iter().map(|v| v.to_bits()));
                out.extend(l.q_local.iter().map(|v| v.to_bits()));
                out.push(l.eta.to_bits());
                out.push(l.delta.to_bits());
                out.push(l.sigma_bar.to_bits());
            }
            out
        };
        bits(self) == bits(other)
    }
}

/// Topology plus the controller of every DGU in it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub topology: MicrogridTopology,
    pub controllers: BTreeMap<DguId, Controller>,
}

impl GridState {
    pub fn gains_in_order(&self) -> Result<Vec<RowVector3<f64>>, SimulationError> {
        self.topology
            .ids()
            .into_iter()
            .map(|id| self.controllers.get(&id).map(Controller::gain).ok_or(SimulationError::MissingController(id)))
            .collect()
    }

    /// Synthesizes a controller for every DGU of `topology`.
    pub fn synthesize(topology: MicrogridTopology, cfg: &SynthesisConfig) -> Result<Self, SimulationError> {
        let results = synthesize_dgus(topology.dgus(), cfg);
        let mut controllers = BTreeMap::new();
        for (id, result) in results {
            match result? {
                SynthesisOutcome::Accepted(c) => {
                    controllers.insert(id, Controller::Certified(c));
                }
                SynthesisOutcome::Denied(reason) => return Err(SimulationError::InitialDenied(id, reason.to_string())),
            }
        }
        Ok(Self { topology, controllers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlugInOutcome {
    Accepted { state: GridState, controller: Box<LocalController> },
    Denied(DenialReason),
}

/// Plug-in protocol: only the newcomer is synthesized; everyone else keeps their controller.
pub fn attempt_plug_in(
    state: &GridState,
    newcomer: Dgu,
    lines: &[LineParams],
    cfg: &SynthesisConfig,
) -> Result<PlugInOutcome, SimulationError> {
    if state.topology.index_of(newcomer.id).is_some() {
        return Err(ModelError::DuplicateDgu(newcomer.id).into());
    }
    for line in lines {
        let other = line.other(newcomer.id).ok_or(ModelError::ForeignLine(newcomer.id))?;
        if state.topology.index_of(other).is_none() {
            return Err(ModelError::DanglingLine(other).into());
        }
    }
    if lines.is_empty() {
        return Ok(PlugInOutcome::Denied(DenialReason::WouldBeIsolated));
    }
    let controller = match synthesize_filter(&newcomer.params.filter(), cfg)? {
        SynthesisOutcome::Accepted(c) => c,
        SynthesisOutcome::Denied(reason) => return Ok(PlugInOutcome::Denied(reason)),
    };
    let topology = state.topology.with_dgu(newcomer, lines)?;
    let mut controllers = state.controllers.clone();
    controllers.insert(newcomer.id, Controller::Certified(controller.clone()));
    Ok(PlugInOutcome::Accepted { state: GridState { topology, controllers }, controller })
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnplugOutcome {
    Accepted(GridState),
    Denied(DenialReason),
}

/// Unplug protocol: allowed exactly when the remaining grid stays connected.
pub fn attempt_unplug(state: &GridState, id: DguId) -> Result<UnplugOutcome, SimulationError> {
    let topology = state.topology.without_dgu(id)?;
    if !topology.is_connected() {
        return Ok(UnplugOutcome::Denied(DenialReason::Disconnects));
    }
    let mut controllers = state.controllers.clone();
    controllers.remove(&id);
    Ok(UnplugOutcome::Accepted(GridState { topology, controllers }))
}

/// Where each DGU's and each line's states live in the global vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub ids: Vec<DguId>,
    /// Oriented lines `(i, j)` whose current (from `i` to `j`) is a state, RL model only.
    pub lines: Vec<(DguId, DguId)>,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        3 * self.ids.len() + self.lines.len()
    }

    pub fn dgu_offset(&self, id: DguId) -> Option<usize> {
        self.ids.iter().position(|&d| d == id).map(|p| 3 * p)
    }

    pub fn line_offset(&self, key: (DguId, DguId)) -> Option<usize> {
        self.lines.iter().position(|&l| l == key).map(|p| 3 * self.ids.len() + p)
    }
}

/// `ẋ = A x + c` for one configuration of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSystem {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub layout: StateLayout,
}

/// Closed-loop dynamics including loads and references.
pub fn closed_loop_system(state: &GridState, line_model: LineModel) -> Result<AffineSystem, SimulationError> {
    let topology = &state.topology;
    let gains = state.gains_in_order()?;
    let system = assemble_global(topology)?;
    let n = topology.len();
    let lines: Vec<(DguId, DguId)> = match line_model {
        LineModel::Qsl => vec![],
        LineModel::Rl => topology.lines().iter().map(|l| (l.i, l.j)).collect(),
    };
    let layout = StateLayout { ids: topology.ids(), lines };
    let dim = layout.dim();
    let mut a = DMatrix::zeros(dim, dim);
    match line_model {
        LineModel::Qsl => {
            a.view_mut((0, 0), (3 * n, 3 * n)).copy_from(&closed_loop_matrix(&system, &gains));
        }
        LineModel::Rl => {
            let mut k = DMatrix::zeros(n, 3 * n);
            for (i, gain) in gains.iter().enumerate() {
                k.fixed_view_mut::<1, 3>(i, 3 * i).copy_from(gain);
            }
            let local = &system.decomposition.a_d + &system.b_hat * k;
            a.view_mut((0, 0), (3 * n, 3 * n)).copy_from(&local);
            for line in topology.lines() {
                let l = line.l.ok_or(SimulationError::MissingLineInductance(line.i, line.j))?;
                let row = layout.line_offset((line.i, line.j)).expect("line in layout");
                let vi = layout.dgu_offset(line.i).expect("endpoint in layout");
                let vj = layout.dgu_offset(line.j).expect("endpoint in layout");
                let ci = topology.dgu(line.i).expect("endpoint exists").params.c_t;
                let cj = topology.dgu(line.j).expect("endpoint exists").params.c_t;
                a[(row, vi)] = 1.0 / l;
                a[(row, vj)] = -1.0 / l;
                a[(row, row)] = -line.r / l;
                a[(vi, row)] = -1.0 / ci;
                a[(vj, row)] = 1.0 / cj;
            }
        }
    }
    let mut c = DVector::zeros(dim);
    for (p, dgu) in topology.dgus().iter().enumerate() {
        let params = &dgu.params;
        match params.load {
            LoadModel::Resistive(r) => a[(3 * p, 3 * p)] -= 1.0 / (r * params.c_t),
            LoadModel::ConstantCurrent(i) => c[3 * p] -= i / params.c_t,
        }
        c[3 * p + 2] = params.v_ref;
    }
    Ok(AffineSystem { a, c, layout })
}

/// Equilibrium `x̄ = −A⁻¹ c`.
pub fn steady_state(system: &AffineSystem) -> Result<DVector<f64>, SimulationError> {
    system.a.clone().lu().solve(&(-&system.c)).ok_or(SimulationError::SingularSystem)
}

/// Exact one-step map of classical RK4 on an affine system: `x⁺ = Φ x + ψ`.
#[derive(Debug, Clone)]
struct Propagator {
    phi: DMatrix<f64>,
    psi: DVector<f64>,
}

impl Propagator {
    fn new(system: &AffineSystem, h: f64) -> Self {
        let n = system.a.nrows();
        let ha = &system.a * h;
        let ha2 = &ha * &ha;
        let ha3 = &ha2 * &ha;
        let ha4 = &ha3 * &ha;
        let eye = DMatrix::<f64>::identity(n, n);
        let phi = &eye + &ha + &ha2 / 2.0 + &ha3 / 6.0 + &ha4 / 24.0;
        let series = &eye + &ha / 2.0 + &ha2 / 6.0 + &ha3 / 24.0;
        let psi = series * &system.c * h;
        Self { phi, psi }
    }

    fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.phi * x + &self.psi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum EventOutcome {
    Applied,
    Accepted,
    Denied(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub event: String,
    pub dgu: DguId,
    pub outcome: EventOutcome,
    /// For plug-ins: every pre-existing controller is bitwise unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub others_unchanged: Option<bool>,
}

/// Samples of one DGU; `NaN` while the DGU is not connected.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DguSeries {
    pub voltage: Vec<f64>,
    pub filter_current: Vec<f64>,
    pub integrator: Vec<f64>,
    pub input: Vec<f64>,
    pub v_ref: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Every DGU present at some point, in id order.
    pub series: BTreeMap<DguId, DguSeries>,
    pub events: Vec<EventRecord>,
    pub diverged_at: Option<f64>,
    pub final_time: f64,
    pub final_state: GridState,
    pub final_x: DVector<f64>,
    pub final_layout: StateLayout,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t)
    }

    /// Last time in `[from, to)` at which `|V − v_ref| > tol · v_ref`, if any.
    pub fn last_excursion(&self, id: DguId, from: f64, to: f64, tol: f64) -> Option<f64> {
        let s = self.series.get(&id)?;
        (self.index_at(from)..self.index_at(to))
            .rev()
            .filter(|&k| s.voltage[k].is_finite())
            .find(|&k| (s.voltage[k] - s.v_ref[k]).abs() > tol * s.v_ref[k])
            .map(|k| self.times[k])
    }

    /// CSV with one row per sample: `t,dgu<i>.V,dgu<i>.It,dgu<i>.v,dgu<i>.u,...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimulationError> {
        let io = |e: csv::Error| SimulationError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for id in self.series.keys() {
            for q in ["V", "It", "v", "u"] {
                header.push(format!("dgu{id}.{q}"));
            }
        }
        w.write_record(&header).map_err(io)?;
        let cell = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            for s in self.series.values() {
                row.extend([s.voltage[k], s.filter_current[k], s.integrator[k], s.input[k]].map(cell));
            }
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| SimulationError::Io(e.to_string()))
    }

    /// Event log as JSON lines.
    pub fn write_event_log<W: Write>(&self, mut out: W) -> Result<(), SimulationError> {
        for e in &self.events {
            let line = serde_json::to_string(e).map_err(|e| SimulationError::Io(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| SimulationError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

/// Where the controllers of the initial DGUs come from.
#[derive(Debug, Clone)]
pub enum ControllerSource {
    /// Synthesize every initial DGU with the scenario's settings.
    Auto,
    Provided(BTreeMap<DguId, Controller>),
}

/// Integrator state that makes an isolated DGU sit at `V = v_ref` with its load supplied.
fn isolated_equilibrium(dgu: &Dgu, k: &RowVector3<f64>) -> [f64; 3] {
    let p = &dgu.params;
    let v = p.v_ref;
    let i_t = p.load.current(v);
    let integrator = (v + p.r_t * i_t - k[0] * v - k[1] * i_t) / k[2];
    [v, i_t, integrator]
}

/// Stepper that owns the evolving grid and state vector.
pub struct Simulator {
    cfg: SynthesisConfig,
    line_model: LineModel,
    dt: f64,
    stride: usize,
    t_end: f64,
    events: Vec<crate::scenario::TimedEvent>,
    state: GridState,
    system: AffineSystem,
    x: DVector<f64>,
    t: f64,
    times: Vec<f64>,
    series: BTreeMap<DguId, DguSeries>,
    records: Vec<EventRecord>,
}

impl Simulator {
    pub fn new(scenario: &Scenario, source: ControllerSource) -> Result<Self, SimulationError> {
        scenario.validate()?;
        let topology = scenario.topology()?;
        if !topology.is_connected() {
            return Err(SimulationError::Disconnected);
        }
        let cfg = scenario.synthesis_config()?;
        let state = match source {
            ControllerSource::Auto => GridState::synthesize(topology, &cfg)?,
            ControllerSource::Provided(controllers) => {
                for id in topology.ids() {
                    if !controllers.contains_key(&id) {
                        return Err(SimulationError::MissingController(id));
                    }
                }
                GridState { topology, controllers }
            }
        };
        let system = closed_loop_system(&state, scenario.line_model)?;
        let x = match scenario.initial {
            InitialCondition::SteadyState => steady_state(&system)?,
            InitialCondition::Zero => DVector::zeros(system.layout.dim()),
        };
        Self::resume(scenario, state, x, 0.0)
    }

    /// Continues from an arbitrary grid state and state vector at time `t0`.
    pub fn resume(scenario: &Scenario, state: GridState, x: DVector<f64>, t0: f64) -> Result<Self, SimulationError> {
        let system = closed_loop_system(&state, scenario.line_model)?;
        if x.len() != system.layout.dim() {
            return Err(SimulationError::Scenario("initial state has the wrong dimension".into()));
        }
        let dt = scenario.dt();
        let stride = ((scenario.sample_interval() / dt).round() as usize).max(1);
        let mut ids: BTreeSet<DguId> = state.topology.ids().into_iter().collect();
        for e in &scenario.events {
            ids.insert(e.event.dgu());
        }
        let series = ids.into_iter().map(|id| (id, DguSeries::default())).collect();
        Ok(Self {
            cfg: scenario.synthesis_config()?,
            line_model: scenario.line_model,
            dt,
            stride,
            t_end: scenario.t_end,
            events: scenario.events.iter().filter(|e| e.t >= t0).cloned().collect(),
            state,
            system,
            x,
            t: t0,
            times: Vec::new(),
            series,
            records: Vec::new(),
        })
    }

    fn record(&mut self) {
        self.times.push(self.t);
        for (id, s) in self.series.iter_mut() {
            match (self.system.layout.dgu_offset(*id), self.state.topology.dgu(*id)) {
                (Some(o), Some(dgu)) => {
                    let k = self.state.controllers[id].gain();
                    s.voltage.push(self.x[o]);
                    s.filter_current.push(self.x[o + 1]);
                    s.integrator.push(self.x[o + 2]);
                    s.input.push(k[0] * self.x[o] + k[1] * self.x[o + 1] + k[2] * self.x[o + 2]);
                    s.v_ref.push(dgu.params.v_ref);
                }
                _ => {
                    for v in [&mut s.voltage, &mut s.filter_current, &mut s.integrator, &mut s.input, &mut s.v_ref] {
                        v.push(f64::NAN);
                    }
                }
            }
        }
    }

    fn diverged(&self) -> bool {
        self.x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
    }

    /// Integrates to `t1`; returns `false` on divergence.
    fn advance(&mut self, t1: f64) -> bool {
        let span = t1 - self.t;
        if span <= 0.0 {
            return true;
        }
        let t0 = self.t;
        let full = Propagator::new(&self.system, self.dt);
        let ratio = span / self.dt;
        let mut steps = ratio.floor() as usize;
        if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
            steps = ratio.round() as usize;
        }
        for k in 1..=steps {
            self.x = full.step(&self.x);
            self.t = t0 + k as f64 * self.dt;
            if self.diverged() {
                self.record();
                return false;
            }
            if k % self.stride == 0 && k < steps {
                self.record();
            }
        }
        let rest = t1 - (t0 + steps as f64 * self.dt);
        if rest > 1e-12 * self.dt {
            self.x = Propagator::new(&self.system, rest).step(&self.x);
            if self.diverged() {
                self.t = t1;
                self.record();
                return false;
            }
        }
        self.t = t1;
        true
    }

    fn apply(&mut self, event: &Event) -> Result<(), SimulationError> {
        let old_layout = self.system.layout.clone();
        let old_x = self.x.clone();
        let mut others_unchanged = None;
        let outcome = match event {
            Event::PlugIn { dgu, lines } => match attempt_plug_in(&self.state, *dgu, lines, &self.cfg) {
                Ok(PlugInOutcome::Accepted { state, .. }) => {
                    let unchanged = self
                        .state
                        .controllers
                        .iter()
                        .all(|(id, c)| state.controllers.get(id).is_some_and(|n| n.bitwise_eq(c)));
                    others_unchanged = Some(unchanged);
                    self.state = state;
                    EventOutcome::Accepted
                }
                Ok(PlugInOutcome::Denied(reason)) => EventOutcome::Denied(reason.to_string()),
                Err(e) => EventOutcome::Failed(e.to_string()),
            },
            Event::Unplug { dgu } => match attempt_unplug(&self.state, *dgu) {
                Ok(UnplugOutcome::Accepted(state)) => {
                    self.state = state;
                    EventOutcome::Accepted
                }
                Ok(UnplugOutcome::Denied(reason)) => EventOutcome::Denied(reason.to_string()),
                Err(e) => EventOutcome::Failed(e.to_string()),
            },
            Event::LoadStep { dgu, load } => self.change_params(*dgu, |p| p.load = *load),
            Event::RefStep { dgu, v_ref } => self.change_params(*dgu, |p| p.v_ref = *v_ref),
        };
        self.records.push(EventRecord {
            t: self.t,
            event: event.kind().to_string(),
            dgu: event.dgu(),
            outcome,
            others_unchanged,
        });
        self.system = closed_loop_system(&self.state, self.line_model)?;
        self.x = self.remap(&old_layout, &old_x);
        Ok(())
    }

    fn change_params(&mut self, id: DguId, edit: impl FnOnce(&mut crate::model::DguParams)) -> EventOutcome {
        let Some(dgu) = self.state.topology.dgu(id) else {
            return EventOutcome::Failed(ModelError::UnknownDgu(id).to_string());
        };
        let mut params = dgu.params;
        edit(&mut params);
        match self.state.topology.with_params(id, params) {
            Ok(t) => {
                self.state.topology = t;
                EventOutcome::Applied
            }
            Err(e) => EventOutcome::Failed(e.to_string()),
        }
    }

    /// Carries states across a layout change; newcomers start at their isolated equilibrium.
    fn remap(&self, old: &StateLayout, old_x: &DVector<f64>) -> DVector<f64> {
        let layout = &self.system.layout;
        let mut x = DVector::zeros(layout.dim());
        for dgu in self.state.topology.dgus() {
            let o = layout.dgu_offset(dgu.id).expect("present");
            match old.dgu_offset(dgu.id) {
                Some(p) => x.rows_mut(o, 3).copy_from(&old_x.rows(p, 3)),
                None => {
                    let k = self.state.controllers[&dgu.id].gain();
                    let init = isolated_equilibrium(dgu, &k);
                    x.rows_mut(o, 3).copy_from_slice(&init);
                }
            }
        }
        for (idx, &(i, j)) in layout.lines.iter().enumerate() {
            let row = 3 * layout.ids.len() + idx;
            x[row] = match old.line_offset((i, j)) {
                Some(p) => old_x[p],
                None => {
                    let line =
                        self.state.topology.lines().iter().find(|l| (l.i, l.j) == (i, j)).expect("line in topology");
                    let vi = x[layout.dgu_offset(i).expect("endpoint")];
                    let vj = x[layout.dgu_offset(j).expect("endpoint")];
                    (vi - vj) / line.r
                }
            };
        }
        x
    }

    pub fn run(mut self) -> Result<Trajectory, SimulationError> {
        self.record();
        let events = std::mem::take(&mut self.events);
        let mut diverged_at = None;
        for e in &events {
            if !self.advance(e.t) {
                diverged_at = Some(self.t);
                break;
            }
            self.apply(&e.event)?;
            self.record();
        }
        if diverged_at.is_none() {
            if self.advance(self.t_end) {
                self.record();
            } else {
                diverged_at = Some(self.t);
            }
        }
        Ok(Trajectory {
            times: self.times,
            series: self.series,
            events: self.records,
            diverged_at,
            final_time: self.t,
            final_state: self.state,
            final_x: self.x,
            final_layout: self.system.layout,
        })
    }
}

/// Runs a scenario from start to end.
pub fn simulate(scenario: &Scenario, source: ControllerSource) -> Result<Trajectory, SimulationError> {
    Simulator::new(scenario, source)?.run()
}
