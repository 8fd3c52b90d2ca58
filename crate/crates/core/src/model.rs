//! Electrical parameters, topology and the state-space matrices of every DGU.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix3x2, RowVector2, RowVector3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// User-facing DGU identifier (1-based in all I/O).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DguId(pub u32);

impl fmt::Display for DguId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum LoadModel {
    /// Current drawn regardless of voltage (A).
    ConstantCurrent(f64),
    /// Load resistance (Ω).
    Resistive(f64),
}

impl LoadModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            LoadModel::Resistive(r) if !(r > 0.0 && r.is_finite()) => {
                Err(ModelError::NonPositive { field: "load resistance" })
            }
            LoadModel::ConstantCurrent(i) if !i.is_finite() => Err(ModelError::NonFinite { field: "load current" }),
            _ => Ok(()),
        }
    }

    /// Load current drawn at voltage `v`.
    pub fn current(&self, v: f64) -> f64 {
        match *self {
            LoadModel::ConstantCurrent(i) => i,
            LoadModel::Resistive(r) => v / r,
        }
    }
}

/// Converter filter constants: the only data the local LMI consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub r_t: f64,
    pub l_t: f64,
    pub c_t: f64,
}

impl FilterParams {
    pub fn new(r_t: f64, l_t: f64, c_t: f64) -> Result<Self, ModelError> {
        let p = Self { r_t, l_t, c_t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, v) in [("r_t", self.r_t), ("l_t", self.l_t), ("c_t", self.c_t)] {
            if !v.is_finite() {
                return Err(ModelError::NonFinite { field });
            }
            if v <= 0.0 {
                return Err(ModelError::NonPositive { field });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DguParams {
    pub r_t: f64,
    pub l_t: f64,
    pub c_t: f64,
    pub load: LoadModel,
    pub v_ref: f64,
}

impl DguParams {
    pub fn filter(&self) -> FilterParams {
        FilterParams { r_t: self.r_t, l_t: self.l_t, c_t: self.c_t }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.filter().validate()?;
        if !(self.v_ref > 0.0 && self.v_ref.is_finite()) {
            return Err(ModelError::NonPositive { field: "v_ref" });
        }
        self.load.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub i: DguId,
    pub j: DguId,
    /// Resistance (Ω).
    pub r: f64,
    /// Inductance (H), used only by the RL line model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
}

impl LineParams {
    pub fn new(i: DguId, j: DguId, r: f64) -> Self {
        Self { i, j, r, l: None }
    }

    pub fn with_inductance(mut self, l: f64) -> Self {
        self.l = Some(l);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.i == self.j {
            return Err(ModelError::SelfLoop(self.i));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(ModelError::NonPositive { field: "line resistance" });
        }
        if let Some(l) = self.l {
            if !(l > 0.0 && l.is_finite()) {
                return Err(ModelError::NonPositive { field: "line inductance" });
            }
        }
        Ok(())
    }

    /// The endpoint opposite to `id`, if `id` is an endpoint.
    pub fn other(&self, id: DguId) -> Option<DguId> {
        if self.i == id {
            Some(self.j)
        } else if self.j == id {
            Some(self.i)
        } else {
            None
        }
    }

    fn key(&self) -> (DguId, DguId) {
        (self.i.min(self.j), self.i.max(self.j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dgu {
    pub id: DguId,
    #[serde(flatten)]
    pub params: DguParams,
}

/// DGUs plus power lines; always internally consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrogridTopology {
    dgus: Vec<Dgu>,
    lines: Vec<LineParams>,
}

impl MicrogridTopology {
    pub fn new(dgus: Vec<Dgu>, lines: Vec<LineParams>) -> Result<Self, ModelError> {
        let mut ids = BTreeSet::new();
        for d in &dgus {
            d.params.validate().map_err(|e| ModelError::InDgu(d.id, Box::new(e)))?;
            if !ids.insert(d.id) {
                return Err(ModelError::DuplicateDgu(d.id));
            }
        }
        let mut pairs = BTreeSet::new();
        for line in &lines {
            line.validate()?;
            for end in [line.i, line.j] {
                if !ids.contains(&end) {
                    return Err(ModelError::DanglingLine(end));
                }
            }
            if !pairs.insert(line.key()) {
                return Err(ModelError::DuplicateLine(line.i, line.j));
            }
        }
        Ok(Self { dgus, lines })
    }

    pub fn dgus(&self) -> &[Dgu] {
        &self.dgus
    }

    pub fn lines(&self) -> &[LineParams] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.dgus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dgus.is_empty()
    }

    pub fn ids(&self) -> Vec<DguId> {
        self.dgus.iter().map(|d| d.id).collect()
    }

    pub fn index_of(&self, id: DguId) -> Option<usize> {
        self.dgus.iter().position(|d| d.id == id)
    }

    pub fn dgu(&self, id: DguId) -> Option<&Dgu> {
        self.dgus.iter().find(|d| d.id == id)
    }

    pub fn incident_lines(&self, id: DguId) -> Vec<LineParams> {
        self.lines.iter().filter(|l| l.other(id).is_some()).copied().collect()
    }

    pub fn neighbors(&self, id: DguId) -> Vec<DguId> {
        self.lines.iter().filter_map(|l| l.other(id)).collect()
    }

    pub fn is_connected(&self) -> bool {
        let Some(first) = self.dgus.first() else { return true };
        let mut seen = BTreeSet::from([first.id]);
        let mut queue = VecDeque::from([first.id]);
        while let Some(id) = queue.pop_front() {
            for n in self.neighbors(id) {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen.len() == self.dgus.len()
    }

    pub fn with_dgu(&self, dgu: Dgu, lines: &[LineParams]) -> Result<Self, ModelError> {
        if self.index_of(dgu.id).is_some() {
            return Err(ModelError::DuplicateDgu(dgu.id));
        }
        let mut dgus = self.dgus.clone();
        dgus.push(dgu);
        let mut all = self.lines.clone();
        all.extend_from_slice(lines);
        Self::new(dgus, all)
    }

    pub fn without_dgu(&self, id: DguId) -> Result<Self, ModelError> {
        if self.index_of(id).is_none() {
            return Err(ModelError::UnknownDgu(id));
        }
        let dgus = self.dgus.iter().filter(|d| d.id != id).copied().collect();
        let lines = self.lines.iter().filter(|l| l.other(id).is_none()).copied().collect();
        Self::new(dgus, lines)
    }

    pub fn with_params(&self, id: DguId, params: DguParams) -> Result<Self, ModelError> {
        let idx = self.index_of(id).ok_or(ModelError::UnknownDgu(id))?;
        let mut dgus = self.dgus.clone();
        dgus[idx].params = params;
        Self::new(dgus, self.lines.clone())
    }
}

/// Per-DGU matrices of the electrical model; state `[V, I_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DguMatrices {
    pub a_ii: Matrix2<f64>,
    pub b_i: Vector2<f64>,
    pub m_i: Vector2<f64>,
    pub h_i: RowVector2<f64>,
    pub a_ij: BTreeMap<DguId, Matrix2<f64>>,
}

pub fn build_dgu_matrices(
    id: DguId,
    filter: &FilterParams,
    incident_lines: &[LineParams],
) -> Result<DguMatrices, ModelError> {
    filter.validate()?;
    let FilterParams { r_t, l_t, c_t } = *filter;
    let mut a_ij = BTreeMap::new();
    for line in incident_lines {
        line.validate()?;
        let other = line.other(id).ok_or(ModelError::ForeignLine(id))?;
        a_ij.insert(other, Matrix2::new(1.0 / (line.r * c_t), 0.0, 0.0, 0.0));
    }
    Ok(DguMatrices {
        a_ii: Matrix2::new(0.0, 1.0 / c_t, -1.0 / l_t, -r_t / l_t),
        b_i: Vector2::new(0.0, 1.0 / l_t),
        m_i: Vector2::new(-1.0 / c_t, 0.0),
        h_i: RowVector2::new(1.0, 0.0),
        a_ij,
    })
}

/// Integrator-augmented model; state `[V, I_t, v]` with `v̇ = v_ref − V`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDgu {
    pub a_hat_ii: Matrix3<f64>,
    pub b_hat: Vector3<f64>,
    pub m_hat: Matrix3x2<f64>,
    pub h_hat: RowVector3<f64>,
    pub a_hat_ij: BTreeMap<DguId, Matrix3<f64>>,
}

fn embed(m: &Matrix2<f64>) -> Matrix3<f64> {
    let mut out = Matrix3::zeros();
    out.fixed_view_mut::<2, 2>(0, 0).copy_from(m);
    out
}

pub fn augment(dgu: &DguMatrices) -> AugmentedDgu {
    let mut a_hat_ii = embed(&dgu.a_ii);
    a_hat_ii[(2, 0)] = -dgu.h_i[0];
    a_hat_ii[(2, 1)] = -dgu.h_i[1];
    let mut m_hat = Matrix3x2::zeros();
    m_hat[(0, 0)] = dgu.m_i[0];
    m_hat[(1, 0)] = dgu.m_i[1];
    m_hat[(2, 1)] = 1.0;
    AugmentedDgu {
        a_hat_ii,
        b_hat: Vector3::new(dgu.b_i[0], dgu.b_i[1], 0.0),
        m_hat,
        h_hat: RowVector3::new(dgu.h_i[0], dgu.h_i[1], 0.0),
        a_hat_ij: dgu.a_ij.iter().map(|(k, m)| (*k, embed(m))).collect(),
    }
}

/// Line-free augmented model of a DGU: everything the local synthesis needs.
pub fn augmented_local(filter: &FilterParams) -> Result<AugmentedDgu, ModelError> {
    Ok(augment(&build_dgu_matrices(DguId(0), filter, &[])?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub a_d: DMatrix<f64>,
    pub a_xi: DMatrix<f64>,
    pub a_c: DMatrix<f64>,
}

/// Stacked augmented model of the whole microgrid, in topology order.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSystem {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub m_hat: DMatrix<f64>,
    pub h_hat: DMatrix<f64>,
    pub decomposition: Decomposition,
}

pub fn assemble_global(topology: &MicrogridTopology) -> Result<GlobalSystem, ModelError> {
    let n = topology.len();
    let mut a_d = DMatrix::zeros(3 * n, 3 * n);
    let mut a_xi = DMatrix::zeros(3 * n, 3 * n);
    let mut a_c = DMatrix::zeros(3 * n, 3 * n);
    let mut b_hat = DMatrix::zeros(3 * n, n);
    let mut m_hat = DMatrix::zeros(3 * n, 2 * n);
    let mut h_hat = DMatrix::zeros(n, 3 * n);
    for (i, dgu) in topology.dgus().iter().enumerate() {
        let aug = augment(&build_dgu_matrices(dgu.id, &dgu.params.filter(), &topology.incident_lines(dgu.id))?);
        a_d.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(&aug.a_hat_ii);
        b_hat.fixed_view_mut::<3, 1>(3 * i, i).copy_from(&aug.b_hat);
        m_hat.fixed_view_mut::<3, 2>(3 * i, 2 * i).copy_from(&aug.m_hat);
        h_hat.fixed_view_mut::<1, 3>(i, 3 * i).copy_from(&aug.h_hat);
        for (other, block) in &aug.a_hat_ij {
            let j = topology.index_of(*other).ok_or(ModelError::DanglingLine(*other))?;
            a_c.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(block);
            a_xi[(3 * i, 3 * i)] -= block[(0, 0)];
        }
    }
    let a_hat = &a_d + &a_xi + &a_c;
    Ok(GlobalSystem { a_hat, b_hat, m_hat, h_hat, decomposition: Decomposition { a_d, a_xi, a_c } })
}

/// Two-DGU augmented matrices with the line self-term folded into each local (1,1) entry.
pub fn appendix_a_matrices(
    first: &FilterParams,
    second: &FilterParams,
    line_r: f64,
) -> Result<[Matrix3<f64>; 2], ModelError> {
    let mut out = [Matrix3::zeros(); 2];
    for (slot, filter) in out.iter_mut().zip([first, second]) {
        let mut a = augmented_local(filter)?.a_hat_ii;
        a[(0, 0)] = -1.0 / (line_r * filter.c_t);
        *slot = a;
    }
    Ok(out)
}

/// Rank of `[B, AB, A²B]`.
pub fn controllability_rank(a: &Matrix3<f64>, b: &Vector3<f64>) -> usize {
    let ab = a * b;
    let a2b = a * ab;
    let m = DMatrix::from_columns(&[
        nalgebra::DVector::from_column_slice(b.as_slice()),
        nalgebra::DVector::from_column_slice(ab.as_slice()),
        nalgebra::DVector::from_column_slice(a2b.as_slice()),
    ]);
    // Columns differ in scale by orders of magnitude; normalize each before ranking.
    let normalized = DMatrix::from_fn(3, 3, |r, c| {
        let n = m.column(c).norm();
        if n > 0.0 {
            m[(r, c)] / n
        } else {
            0.0
        }
    });
    gridforge_lmi::linalg::rank(&normalized, 1e-10)
}
