//! Feasibility atlas of the local LMI over a grid of converter constants.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certification::check_local_structure;
use crate::error::{ModelError, SynthesisError};
use crate::model::FilterParams;
use crate::synthesis::{synthesize_filter, verify_controller, SynthesisConfig, SynthesisOutcome};

/// Environment variable capping the worker threads of parallel sweeps.
pub const THREADS_ENV: &str = "GRIDFORGE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub const fn new(min: f64, max: f64, points: usize) -> Self {
        Self { min, max, points }
    }

    /// Evenly spaced values including both ends.
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => vec![],
            1 => vec![self.min],
            n => {
                (0..n)
                    .map(|k| {
                        if k == n - 1 {
                            self.max
                        } else {
                            self.min + (self.max - self.min) * k as f64 / (n - 1) as f64
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub r_t: Axis,
    pub l_t: Axis,
    pub c_t: Axis,
}

/// Converter constants typical of low-voltage DC microgrids.
pub const GREEN_BOX: SweepGrid =
    SweepGrid { r_t: Axis::new(0.05, 1.0, 5), l_t: Axis::new(1e-3, 10e-3, 5), c_t: Axis::new(1e-3, 5e-3, 5) };

impl SweepGrid {
    pub fn points(&self) -> Vec<FilterParams> {
        let (rs, ls, cs) = (self.r_t.values(), self.l_t.values(), self.c_t.values());
        let mut out = Vec::with_capacity(rs.len() * ls.len() * cs.len());
        for &r_t in &rs {
            for &l_t in &ls {
                for &c_t in &cs {
                    out.push(FilterParams { r_t, l_t, c_t });
                }
            }
        }
        out
    }

    pub fn contains(&self, p: &FilterParams) -> bool {
        self.r_t.contains(p.r_t) && self.l_t.contains(p.l_t) && self.c_t.contains(p.c_t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum PointStatus {
    Feasible,
    Denied(String),
    Invalid(String),
    NumericalFailure(String),
}

impl PointStatus {
    pub fn label(&self) -> &'static str {
        match self {
            PointStatus::Feasible => "feasible",
            PointStatus::Denied(_) => "denied",
            PointStatus::Invalid(_) => "invalid",
            PointStatus::NumericalFailure(_) => "numerical_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub filter: FilterParams,
    pub status: PointStatus,
    /// Smallest block margin reported by the solver.
    pub min_margin: Option<f64>,
    pub k3: Option<f64>,
    /// The controller passed the full local certificate suite.
    pub certified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub total: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub sigma_bar: f64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn summary(&self) -> SweepSummary {
        let count = |f: fn(&PointStatus) -> bool| self.points.iter().filter(|p| f(&p.status)).count();
        SweepSummary {
            total: self.points.len(),
            feasible: count(|s| matches!(s, PointStatus::Feasible)),
            infeasible: count(|s| matches!(s, PointStatus::Denied(_))),
            failures: count(|s| matches!(s, PointStatus::Invalid(_) | PointStatus::NumericalFailure(_))),
        }
    }

    /// CSV with columns `r_t,l_t,c_t,status,min_margin,k3`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r_t", "l_t", "c_t", "status", "min_margin", "k3"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            w.write_record([
                p.filter.r_t.to_string(),
                p.filter.l_t.to_string(),
                p.filter.c_t.to_string(),
                p.status.label().to_string(),
                opt(p.min_margin),
                opt(p.k3),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn evaluate(filter: FilterParams, cfg: &SynthesisConfig) -> SweepPoint {
    let mut point = SweepPoint { filter, status: PointStatus::Feasible, min_margin: None, k3: None, certified: false };
    if let Err(e) = filter.validate() {
        point.status = PointStatus::Invalid(e.to_string());
        return point;
    }
    match synthesize_filter(&filter, cfg) {
        Ok(SynthesisOutcome::Accepted(ctrl)) => {
            point.min_margin = ctrl.diagnostics.margins.iter().copied().reduce(f64::min);
            point.k3 = Some(ctrl.k[2]);
            point.certified = verify_controller(&ctrl).is_ok() && check_local_structure(&ctrl).is_ok_and(|r| r.passed);
        }
        Ok(SynthesisOutcome::Denied(reason)) => point.status = PointStatus::Denied(reason.to_string()),
        Err(SynthesisError::Model(e)) => point.status = PointStatus::Invalid(e.to_string()),
        Err(e) => point.status = PointStatus::NumericalFailure(e.to_string()),
    }
    point
}

/// Runs `f` on a rayon pool capped by `GRIDFORGE_THREADS` when it is set.
pub fn with_thread_limit<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let limit = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    match limit.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// Synthesizes every grid point in parallel; point order follows [`SweepGrid::points`].
pub fn run_sweep(grid: &SweepGrid, sigma_bar: f64, alphas: [f64; 5]) -> Result<SweepResult, ModelError> {
    run_points(&grid.points(), sigma_bar, alphas)
}

/// Same as [`run_sweep`] for an arbitrary list of filters, kept in input order.
pub fn run_points(filters: &[FilterParams], sigma_bar: f64, alphas: [f64; 5]) -> Result<SweepResult, ModelError> {
    let cfg = SynthesisConfig::new(sigma_bar)?.with_alphas(alphas)?;
    let points = with_thread_limit(|| filters.par_iter().map(|f| evaluate(*f, &cfg)).collect());
    Ok(SweepResult { sigma_bar, points })
}
