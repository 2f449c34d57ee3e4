//! Grid topology, bus kinds, and the network Laplacian.
//!
//! Every matrix and vector produced downstream follows the canonical bus
//! order: generators ascending by id, then loads ascending by id.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Injected power in p.u., positive for generation.
    #[serde(default)]
    pub power: f64,
    #[serde(default = "unit_voltage")]
    pub voltage_mag: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
}

fn unit_voltage() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub susceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
}

const LINE5_JSON: &str = include_str!("../../../cases/line5.json");
const IEEE57_JSON: &str = include_str!("../../../cases/ieee57.json");

impl GridCase {
    /// Parses and validates a case from its JSON text.
    pub fn from_json_str(text: &str, context: &str) -> Result<Self> {
        let case: GridCase =
            serde_json::from_str(text).map_err(|e| Error::json(context, &e))?;
        case.validate()?;
        Ok(case)
    }

    /// One of the cases shipped with the crate: `line5` or `ieee57`.
    pub fn bundled(name: &str) -> Result<Self> {
        match name {
            "line5" => Self::from_json_str(LINE5_JSON, "cases/line5.json"),
            "ieee57" => Self::from_json_str(IEEE57_JSON, "cases/ieee57.json"),
            other => Err(Error::InvalidParameter(format!(
                "no bundled case named {other:?}"
            ))),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for bus in &self.buses {
            if !ids.insert(bus.id) {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.voltage_mag.is_finite() && bus.voltage_mag > 0.0) {
                return Err(Error::Validation(format!(
                    "bus {}: voltage_mag must be positive",
                    bus.id
                )));
            }
            if !bus.power.is_finite() {
                return Err(Error::Validation(format!("bus {}: power is not finite", bus.id)));
            }
            match bus.kind {
                BusKind::Generator => {
                    for (field, value) in [("inertia", bus.inertia), ("damping", bus.damping)] {
                        if let Some(v) = value {
                            if !(v.is_finite() && v > 0.0) {
                                return Err(Error::Validation(format!(
                                    "generator {}: {field} must be positive",
                                    bus.id
                                )));
                            }
                        }
                    }
                }
                BusKind::Load => {
                    if bus.inertia.is_some() || bus.damping.is_some() {
                        return Err(Error::Validation(format!(
                            "load {} must not carry inertia or damping",
                            bus.id
                        )));
                    }
                }
            }
        }
        if !self.buses.iter().any(|b| b.kind == BusKind::Generator) {
            return Err(Error::Validation("case has no generator bus".into()));
        }

        let mut pairs = BTreeSet::new();
        for line in &self.lines {
            for end in [line.from, line.to] {
                if !ids.contains(&end) {
                    return Err(Error::Validation(format!(
                        "line {}-{} references unknown bus {end}",
                        line.from, line.to
                    )));
                }
            }
            if line.from == line.to {
                return Err(Error::Validation(format!("self-loop at bus {}", line.from)));
            }
            if !(line.susceptance.is_finite() && line.susceptance > 0.0) {
                return Err(Error::Validation(format!(
                    "line {}-{}: susceptance must be positive",
                    line.from, line.to
                )));
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if !pairs.insert(key) {
                return Err(Error::Validation(format!(
                    "duplicate line between buses {} and {}",
                    key.0, key.1
                )));
            }
        }

        let unreachable = self.unreachable_from_first();
        if !unreachable.is_empty() {
            return Err(Error::Validation(format!(
                "disconnected grid: buses {unreachable:?} are unreachable"
            )));
        }
        Ok(())
    }

    fn unreachable_from_first(&self) -> Vec<BusId> {
        let Some(start) = self.buses.first().map(|b| b.id) else {
            return Vec::new();
        };
        let mut adjacency: BTreeMap<BusId, Vec<BusId>> = BTreeMap::new();
        for line in &self.lines {
            adjacency.entry(line.from).or_default().push(line.to);
            adjacency.entry(line.to).or_default().push(line.from);
        }
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(bus) = queue.pop_front() {
            for &next in adjacency.get(&bus).into_iter().flatten() {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        self.buses
            .iter()
            .map(|b| b.id)
            .filter(|id| !seen.contains(id))
            .collect()
    }

    pub fn generator_ids(&self) -> Vec<BusId> {
        self.ids_of(BusKind::Generator)
    }

    pub fn load_ids(&self) -> Vec<BusId> {
        self.ids_of(BusKind::Load)
    }

    fn ids_of(&self, kind: BusKind) -> Vec<BusId> {
        let mut ids: Vec<_> = self
            .buses
            .iter()
            .filter(|b| b.kind == kind)
            .map(|b| b.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Generators ascending, then loads ascending.
    pub fn canonical_order(&self) -> Vec<BusId> {
        let mut order = self.generator_ids();
        order.extend(self.load_ids());
        order
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    /// Inertia and damping stored on the generator buses, in canonical order.
    /// Returns `None` if any generator lacks either value.
    pub fn true_dynamics(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut inertia = Vec::new();
        let mut damping = Vec::new();
        for id in self.generator_ids() {
            let bus = self.bus(id)?;
            inertia.push(bus.inertia?);
            damping.push(bus.damping?);
        }
        Some((inertia, damping))
    }
}

pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GridCase::from_json_str(&text, &path.display().to_string())
}

/// The network Laplacian split into generator/load blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBlocks {
    pub full: DMatrix<f64>,
    pub gg: DMatrix<f64>,
    pub gl: DMatrix<f64>,
    pub lg: DMatrix<f64>,
    pub ll: DMatrix<f64>,
    /// Bus injections in canonical order.
    pub injections: DVector<f64>,
    pub gen_ids: Vec<BusId>,
    pub load_ids: Vec<BusId>,
}

impl LaplacianBlocks {
    pub fn n_gen(&self) -> usize {
        self.gen_ids.len()
    }

    pub fn n_load(&self) -> usize {
        self.load_ids.len()
    }
}

pub fn build_laplacian(case: &GridCase) -> LaplacianBlocks {
    let gen_ids = case.generator_ids();
    let load_ids = case.load_ids();
    let order: Vec<BusId> = gen_ids.iter().chain(&load_ids).copied().collect();
    let index: BTreeMap<BusId, usize> = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let voltage: BTreeMap<BusId, f64> = case.buses.iter().map(|b| (b.id, b.voltage_mag)).collect();

    let n = order.len();
    let mut full = DMatrix::zeros(n, n);
    for line in &case.lines {
        let (i, j) = (index[&line.from], index[&line.to]);
        let coupling = voltage[&line.from] * voltage[&line.to] * line.susceptance;
        full[(i, j)] = -coupling;
        full[(j, i)] = -coupling;
    }
    // Diagonal summed in canonical order so declaration order cannot change
    // the rounding.
    for i in 0..n {
        full[(i, i)] = -full.row(i).sum();
    }
    let injections = DVector::from_iterator(
        n,
        order.iter().map(|id| case.bus(*id).map_or(0.0, |b| b.power)),
    );

    let g = gen_ids.len();
    let l = load_ids.len();
    LaplacianBlocks {
        gg: full.view((0, 0), (g, g)).into_owned(),
        gl: full.view((0, g), (g, l)).into_owned(),
        lg: full.view((g, 0), (l, g)).into_owned(),
        ll: full.view((g, g), (l, l)).into_owned(),
        full,
        injections,
        gen_ids,
        load_ids,
    }
}
