#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use oscloc::{
    build_laplacian, kron_reduce, learn, scan, simulate_reduced, spectral_stats, Bus, BusId, BusKind,
    DynParams, ForcingSpec, GridCase, Line, ReducedModel, ScanResult, SimConfig, Trajectory,
};

pub const SIGMA: f64 = 0.2;
pub const RATE: f64 = 50.0;
pub const AMBIENT_SECONDS: f64 = 600.0;
pub const EVENT_SECONDS: f64 = 200.0;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub struct Grid {
    pub case: GridCase,
    pub model: ReducedModel,
    pub truth: DynParams,
}

impl Grid {
    pub fn bundled(name: &str) -> Self {
        let case = GridCase::bundled(name).unwrap();
        let model = kron_reduce(&build_laplacian(&case)).unwrap();
        let truth = DynParams::from_case(&case, SIGMA).unwrap();
        Grid { case, model, truth }
    }

    pub fn ambient(&self, seconds: f64, seed: u64) -> Trajectory {
        simulate_reduced(&self.model, &self.truth, None, &SimConfig::new(seconds, RATE, seed), &self.case.name)
            .unwrap()
    }

    pub fn learned(&self, seed: u64) -> DynParams {
        learn(&self.ambient(AMBIENT_SECONDS, seed), &self.model).unwrap().0
    }

    pub fn forced(&self, forcing: &ForcingSpec, seconds: f64, seed: u64) -> Trajectory {
        simulate_reduced(&self.model, &self.truth, Some(forcing), &SimConfig::new(seconds, RATE, seed), &self.case.name)
            .unwrap()
    }

    pub fn scan_all(&self, traj: &Trajectory, params: &DynParams) -> ScanResult {
        let cache = spectral_stats(traj, None).unwrap();
        scan(&cache, &self.model, params, &self.model.bus_ids(), None).unwrap()
    }
}

pub fn forcing(source: BusId, amplitude: f64, frequency: f64) -> ForcingSpec {
    ForcingSpec { source, amplitude, frequency, phase: 0.0 }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

/// The `line5` topology with every susceptance set to `b`.
pub fn line5_with_susceptance(b: f64) -> GridCase {
    let mut case = GridCase::bundled("line5").unwrap();
    for line in &mut case.lines {
        line.susceptance = b;
    }
    case
}

/// Random connected grid: a random spanning tree plus `extra` chords, ids
/// shuffled so generators are not always the low ids. Generators carry
/// inertia in [1, 3) and damping in [0.4, 1.5).
pub fn random_case(rng: &mut impl Rng, n_gen: usize, n_load: usize, extra: usize) -> GridCase {
    let total = n_gen + n_load;
    let mut ids: Vec<BusId> = (1..=total as BusId).collect();
    ids.shuffle(rng);
    let buses = ids
        .iter()
        .enumerate()
        .map(|(pos, &id)| {
            let generator = pos < n_gen;
            Bus {
                id,
                kind: if generator { BusKind::Generator } else { BusKind::Load },
                power: 0.0,
                voltage_mag: 1.0,
                inertia: generator.then(|| rng.random_range(1.0..3.0)),
                damping: generator.then(|| rng.random_range(0.4..1.5)),
            }
        })
        .collect();
    let mut pairs = std::collections::BTreeSet::new();
    let mut lines = Vec::new();
    for i in 1..total {
        let j = rng.random_range(0..i);
        pairs.insert((ids[i].min(ids[j]), ids[i].max(ids[j])));
        lines.push(Line { from: ids[i], to: ids[j], susceptance: rng.random_range(0.5..3.0) });
    }
    for _ in 0..extra {
        let (a, b) = (ids[rng.random_range(0..total)], ids[rng.random_range(0..total)]);
        if a != b && pairs.insert((a.min(b), a.max(b))) {
            lines.push(Line { from: a, to: b, susceptance: rng.random_range(0.5..3.0) });
        }
    }
    let case = GridCase { name: "random".into(), buses, lines };
    case.validate().unwrap();
    case
}
