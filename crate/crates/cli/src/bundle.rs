//! Controller bundle file format.
//!
//! A bundle lists one entry per DGU. Entries with a Lyapunov matrix `P` are
//! certified controllers; entries carrying only `K` are bare gains (for example
//! LQR designs) and can only be judged by their closed-loop spectrum.

use std::collections::BTreeMap;

use gridforge::model::{DguId, FilterParams};
use gridforge::simulator::Controller;
use gridforge::synthesis::{lyapunov_derivative, LocalController, RawSolution, SolverDiagnostics};
use nalgebra::{Matrix3, RowVector3};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerEntry {
    pub dgu_id: DguId,
    #[serde(rename = "K")]
    pub k: [f64; 3],
    /// Row-major Lyapunov block.
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<SolverDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawSolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denial {
    pub dgu_id: DguId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerBundle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_bar: Option<f64>,
    pub controllers: Vec<ControllerEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub denied: Vec<Denial>,
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

impl ControllerEntry {
    pub fn from_certified(id: DguId, ctrl: &LocalController) -> Self {
        Self {
            dgu_id: id,
            k: [ctrl.k[0], ctrl.k[1], ctrl.k[2]],
            p: Some(rows(&ctrl.p)),
            eta: Some(ctrl.eta),
            sigma_bar: Some(ctrl.sigma_bar),
            delta: Some(ctrl.delta),
            diagnostics: Some(ctrl.diagnostics.clone()),
            raw: Some(ctrl.raw),
        }
    }

    pub fn gain_only(id: DguId, k: &RowVector3<f64>) -> Self {
        Self {
            dgu_id: id,
            k: [k[0], k[1], k[2]],
            p: None,
            eta: None,
            sigma_bar: None,
            delta: None,
            diagnostics: None,
            raw: None,
        }
    }

    pub fn gain(&self) -> RowVector3<f64> {
        RowVector3::from(self.k)
    }

    /// Rebuilds a controller for a DGU with the given filter.
    ///
    /// `Q_i` is always recomputed from `K` and `P` rather than trusted from the file.
    pub fn to_controller(&self, filter: &FilterParams) -> Result<Controller, CliError> {
        let Some(p_rows) = self.p else {
            return Ok(Controller::GainOnly { k: self.gain() });
        };
        let missing = |field| CliError::Bundle(format!("DGU {}: {field} is required with P", self.dgu_id));
        let eta = self.eta.ok_or_else(|| missing("eta"))?;
        let sigma_bar = self.sigma_bar.ok_or_else(|| missing("sigma_bar"))?;
        let k = self.gain();
        let p = Matrix3::from_fn(|i, j| p_rows[i][j]);
        let delta = self.delta.unwrap_or(-(k[1] - filter.r_t) / k[2]);
        let mut ctrl = LocalController {
            filter: *filter,
            sigma_bar,
            k,
            p,
            eta,
            delta,
            q_local: Matrix3::zeros(),
            raw: self.raw.unwrap_or(RawSolution {
                y: Matrix3::from_element(f64::NAN),
                g: RowVector3::from_element(f64::NAN),
                gamma: [f64::NAN; 3],
                beta: f64::NAN,
                zeta: f64::NAN,
            }),
            diagnostics: self.diagnostics.clone().unwrap_or(SolverDiagnostics {
                status: "imported".into(),
                iterations: 0,
                objective: f64::NAN,
                margins: vec![],
            }),
        };
        let f = ctrl.closed_loop().map_err(|e| CliError::Bundle(format!("DGU {}: {e}", self.dgu_id)))?;
        ctrl.q_local = lyapunov_derivative(&f, &p);
        Ok(Controller::Certified(Box::new(ctrl)))
    }
}

impl ControllerBundle {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Bundle(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    /// Controllers for the given DGUs, keyed by id.
    pub fn controllers(
        &self,
        filters: &BTreeMap<DguId, FilterParams>,
    ) -> Result<BTreeMap<DguId, Controller>, CliError> {
        let mut out = BTreeMap::new();
        for entry in &self.controllers {
            let Some(filter) = filters.get(&entry.dgu_id) else { continue };
            if out.insert(entry.dgu_id, entry.to_controller(filter)?).is_some() {
                return Err(CliError::Bundle(format!("duplicate entry for DGU {}", entry.dgu_id)));
            }
        }
        Ok(out)
    }
}
