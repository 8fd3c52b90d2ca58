//! Scenario files: topology, synthesis settings and a timed event list.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, SimulationError};
use crate::model::{Dgu, DguId, LineParams, LoadModel, MicrogridTopology};
use crate::synthesis::{SynthesisConfig, DEFAULT_ALPHAS};

pub const DEFAULT_DT: f64 = 1e-5;
pub const DEFAULT_SAMPLE_INTERVAL: f64 = 1e-4;

/// Six-DGU meshed grid with a plug-in, a load step and an unplug.
pub const MESHED_SIX_DGU_JSON: &str = include_str!("../data/scenario_iv.json");
/// Two-DGU grid used by the LQR and pole-placement comparison.
pub const TWO_DGU_JSON: &str = include_str!("../data/scenario_appendix_a.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineModel {
    /// Lines as resistors (inductance neglected).
    #[default]
    Qsl,
    /// One current state per line, `L İ = V_i − V_j − R I`.
    Rl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Start at the equilibrium of the initial configuration.
    #[default]
    SteadyState,
    /// Start from the zero state.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    PlugIn { dgu: Dgu, lines: Vec<LineParams> },
    Unplug { dgu: DguId },
    LoadStep { dgu: DguId, load: LoadModel },
    RefStep { dgu: DguId, v_ref: f64 },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::PlugIn { .. } => "plug_in",
            Event::Unplug { .. } => "unplug",
            Event::LoadStep { .. } => "load_step",
            Event::RefStep { .. } => "ref_step",
        }
    }

    pub fn dgu(&self) -> DguId {
        match self {
            Event::PlugIn { dgu, .. } => dgu.id,
            Event::Unplug { dgu } | Event::LoadStep { dgu, .. } | Event::RefStep { dgu, .. } => *dgu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t: f64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sigma_bar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<[f64; 5]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Spacing of recorded samples (s); event instants are always recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub line_model: LineModel,
    #[serde(default)]
    pub initial: InitialCondition,
    pub dgus: Vec<Dgu>,
    #[serde(default)]
    pub lines: Vec<LineParams>,
    #[serde(default)]
    pub events: Vec<TimedEvent>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimulationError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| SimulationError::Scenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, SimulationError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SimulationError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn meshed_six_dgu() -> Self {
        Self::from_json(MESHED_SIX_DGU_JSON).expect("shipped scenario is valid")
    }

    pub fn two_dgu() -> Self {
        Self::from_json(TWO_DGU_JSON).expect("shipped scenario is valid")
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(DEFAULT_DT)
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval.unwrap_or(DEFAULT_SAMPLE_INTERVAL).max(self.dt())
    }

    pub fn synthesis_config(&self) -> Result<SynthesisConfig, ModelError> {
        SynthesisConfig::new(self.sigma_bar)?.with_alphas(self.alphas.unwrap_or(DEFAULT_ALPHAS))
    }

    pub fn topology(&self) -> Result<MicrogridTopology, ModelError> {
        MicrogridTopology::new(self.dgus.clone(), self.lines.clone())
    }

    /// Structural checks that do not need synthesis.
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |msg: String| Err(SimulationError::Scenario(msg));
        if !(self.dt() > 0.0 && self.dt().is_finite()) {
            return bad("dt must be positive".into());
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be positive".into());
        }
        if let Some(s) = self.sample_interval {
            if !(s > 0.0 && s.is_finite()) {
                return bad("sample_interval must be positive".into());
            }
        }
        self.synthesis_config()?;
        self.topology()?;
        let mut last = 0.0;
        for e in &self.events {
            if !(e.t > 0.0 && e.t < self.t_end) {
                return bad(format!("event at t = {} is outside (0, t_end)", e.t));
            }
            if e.t < last {
                return bad("events must be sorted by time".into());
            }
            last = e.t;
            match &e.event {
                Event::PlugIn { dgu, lines } => {
                    dgu.params.validate().map_err(|err| ModelError::InDgu(dgu.id, Box::new(err)))?;
                    for line in lines {
                        line.validate()?;
                        if line.other(dgu.id).is_none() {
                            return Err(ModelError::ForeignLine(dgu.id).into());
                        }
                    }
                }
                Event::LoadStep { load, .. } => load.validate()?,
                Event::RefStep { v_ref, .. } => {
                    if !(*v_ref > 0.0 && v_ref.is_finite()) {
                        return Err(ModelError::NonPositive { field: "v_ref" }.into());
                    }
                }
                Event::Unplug { .. } => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenarios_parse() {
        let s = Scenario::meshed_six_dgu();
        assert_eq!(s.dgus.len(), 5);
        assert_eq!(s.events.len(), 3);
        assert!(s.topology().unwrap().is_connected());
        let times: Vec<f64> = s.events.iter().map(|e| e.t).collect();
        assert_eq!(times, vec![4.0, 8.0, 12.0]);
        assert_eq!(Scenario::two_dgu().dgus.len(), 2);
    }

    #[test]
    fn round_trip_is_identity() {
        let s = Scenario::meshed_six_dgu();
        let again = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn event_outside_horizon_is_rejected() {
        let mut s = Scenario::meshed_six_dgu();
        s.events[0].t = s.t_end + 1.0;
        assert!(matches!(s.validate(), Err(SimulationError::Scenario(_))));
    }

    #[test]
    fn negative_resistance_is_rejected() {
        let text = MESHED_SIX_DGU_JSON.replacen("\"r_t\": 0.2", "\"r_t\": -1.0", 1);
        assert!(Scenario::from_json(&text).is_err());
    }
}
