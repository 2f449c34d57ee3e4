//! Scenario files, the simulate → learn → localize pipeline, and report
//! output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{build_laplacian, load_case, BusId, GridCase};
use crate::identification::{learn, MomentEstimates};
use crate::localization::{scan, spectral_stats, ScanResult};
use crate::reduction::{kron_reduce, ReducedModel};
use crate::simulator::{simulate_full_dae, simulate_reduced, DynParams, ForcingSpec, SimConfig};
use crate::trajectory::{write_trajectory, Trajectory};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub duration: f64,
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub duration: f64,
    pub rate: f64,
    pub seed: u64,
    pub forcing: ForcingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Resolved relative to the scenario file's directory.
    pub case: PathBuf,
    pub ambient: RunSpec,
    pub event: EventSpec,
    pub sigma: f64,
    pub output_dir: PathBuf,
    /// Optional `[fmin, fmax]` restriction of the scanned band, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
    /// Use the differential-algebraic integrator instead of the reduced one.
    #[serde(default)]
    pub full_dae: bool,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.ambient.duration) && positive(self.event.duration)) {
            return Err(Error::InvalidParameter("scenario durations must be positive".into()));
        }
        if !(positive(self.ambient.rate) && positive(self.event.rate)) {
            return Err(Error::InvalidParameter("scenario rates must be positive".into()));
        }
        if !positive(self.sigma) {
            return Err(Error::InvalidParameter("scenario sigma must be positive".into()));
        }
        self.event.forcing.validate()
    }
}

/// A parsed scenario plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub base_dir: PathBuf,
    /// SHA-256 of the scenario file bytes.
    pub hash: String,
}

impl LoadedScenario {
    pub fn case_path(&self) -> PathBuf {
        self.base_dir.join(&self.scenario.case)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.scenario.output_dir)
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let scenario: Scenario = serde_json::from_slice(&bytes)
        .map_err(|e| Error::json(path.display().to_string(), &e))?;
    scenario.validate()?;
    Ok(LoadedScenario {
        scenario,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        hash: hash_bytes(&bytes),
    })
}

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_hash: Option<String>,
}

impl Provenance {
    pub fn new(scenario_hash: Option<String>) -> Self {
        Provenance { version: VERSION.to_string(), scenario_hash }
    }

    fn csv_comment(&self) -> String {
        match &self.scenario_hash {
            Some(h) => format!("# oscloc {} scenario={h}\n", self.version),
            None => format!("# oscloc {}\n", self.version),
        }
    }
}

/// On-disk form of learned parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub inertia: BTreeMap<BusId, f64>,
    pub damping: BTreeMap<BusId, f64>,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub condition_number: f64,
    pub n_used: usize,
}

impl ParamsFile {
    pub fn new(gen_ids: &[BusId], params: &DynParams, moments: Option<&MomentEstimates>) -> Self {
        ParamsFile {
            inertia: gen_ids.iter().copied().zip(params.inertia.iter().copied()).collect(),
            damping: gen_ids.iter().copied().zip(params.damping.iter().copied()).collect(),
            sigma: params.sigma,
            diagnostics: moments.map(|m| Diagnostics { condition_number: m.condition_number, n_used: m.n_used }),
            provenance: None,
        }
    }

    /// Parameters in the canonical order of `gen_ids`.
    pub fn to_params(&self, gen_ids: &[BusId]) -> Result<DynParams> {
        let lookup = |map: &BTreeMap<BusId, f64>, what: &str| -> Result<Vec<f64>> {
            gen_ids
                .iter()
                .map(|id| {
                    map.get(id).copied().ok_or_else(|| {
                        Error::InvalidParameter(format!("params file lacks {what} for generator {id}"))
                    })
                })
                .collect()
        };
        DynParams::new(lookup(&self.inertia, "inertia")?, lookup(&self.damping, "damping")?, self.sigma)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("params serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), &e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerSummary {
    pub bus_id: BusId,
    pub k: usize,
    pub freq_hz: f64,
    pub loglik: f64,
    pub gamma_hat: f64,
    pub phi_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub winner: WinnerSummary,
    pub winner_group: Vec<BusId>,
    /// Per-sample log-likelihood gap to the best source outside the
    /// winner group; absent when every candidate is in the group.
    pub runner_up_gap: Option<f64>,
    pub runner_up: Option<BusId>,
    pub sigma: f64,
    pub n: usize,
    pub provenance: Provenance,
}

impl ScanSummary {
    pub fn from_scan(scan: &ScanResult, provenance: Provenance) -> Result<Self> {
        let top = scan.winner().ok_or(Error::EmptyScan)?;
        Ok(ScanSummary {
            winner: WinnerSummary {
                bus_id: top.source,
                k: top.bin,
                freq_hz: top.frequency,
                loglik: top.loglik,
                gamma_hat: top.gamma_hat,
                phi_hat: top.phi_hat,
            },
            winner_group: scan.winner_group.clone(),
            runner_up_gap: scan.runner_up_gap(),
            runner_up: scan.runner_up().map(|e| e.source),
            sigma: scan.sigma,
            n: scan.n,
            provenance,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("summary serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the scan table. With `top`, only the best `top` rows in ranked
/// order; otherwise every row ordered by `(bus_id, k)`.
pub fn write_scan_csv(scan: &ScanResult, path: impl AsRef<Path>, top: Option<usize>, provenance: &Provenance) -> Result<()> {
    if scan.entries.is_empty() {
        return Err(Error::EmptyScan);
    }
    let mut out = provenance.csv_comment();
    out.push_str("bus_id,k,freq_hz,loglik,gamma_hat,phi_hat\n");
    let rows: Box<dyn Iterator<Item = _>> = match top {
        Some(k) => Box::new(scan.ranked().take(k)),
        None => Box::new(scan.entries.iter()),
    };
    for e in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.source,
            e.bin,
            num(e.frequency),
            num(e.loglik),
            num(e.gamma_hat),
            num(e.phi_hat)
        );
    }
    write_text(path.as_ref(), out)
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub loglik: PathBuf,
    pub spectrum: PathBuf,
    pub summary: PathBuf,
}

/// Writes, into `dir`:
/// - `loglik_by_bus.csv`: one row per bin, one log-likelihood column per bus;
/// - `spectrum.csv`: `|ω̃(k)|` per generator over `0 < k < N/2` of the raw
///   frequency series;
/// - `summary.json`.
pub fn emit_report(scan: &ScanResult, traj: &Trajectory, dir: impl AsRef<Path>, provenance: &Provenance) -> Result<ReportFiles> {
    if scan.entries.is_empty() {
        return Err(Error::EmptyScan);
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut buses: Vec<BusId> = scan.entries.iter().map(|e| e.source).collect();
    buses.dedup();
    let mut by_bin: BTreeMap<usize, (f64, BTreeMap<BusId, f64>)> = BTreeMap::new();
    for e in &scan.entries {
        by_bin.entry(e.bin).or_insert_with(|| (e.frequency, BTreeMap::new())).1.insert(e.source, e.loglik);
    }
    let mut out = provenance.csv_comment();
    out.push_str("k,freq_hz");
    for id in &buses {
        let _ = write!(out, ",bus_{id}");
    }
    out.push('\n');
    for (bin, (freq, row)) in &by_bin {
        let _ = write!(out, "{bin},{}", num(*freq));
        for id in &buses {
            out.push(',');
            if let Some(v) = row.get(id) {
                out.push_str(&num(*v));
            }
        }
        out.push('\n');
    }
    let loglik = dir.join("loglik_by_bus.csv");
    write_text(&loglik, out)?;

    let spectrum = dir.join("spectrum.csv");
    write_text(&spectrum, spectrum_csv(traj, provenance)?)?;

    let summary = dir.join("summary.json");
    ScanSummary::from_scan(scan, provenance.clone())?.write(&summary)?;
    Ok(ReportFiles { loglik, spectrum, summary })
}

fn spectrum_csv(traj: &Trajectory, provenance: &Provenance) -> Result<String> {
    use rustfft::{num_complex::Complex64, FftPlanner};
    traj.validate()?;
    let n = traj.n_samples();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let norm = (n as f64).sqrt().recip();
    let amplitudes: Vec<Vec<f64>> = (0..traj.n_gen())
        .map(|j| {
            let mut buf: Vec<Complex64> = traj.omega.column(j).iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.process(&mut buf);
            buf.iter().map(|c| c.norm() * norm).collect()
        })
        .collect();
    let mut out = provenance.csv_comment();
    out.push_str("k,freq_hz");
    for id in &traj.gen_ids {
        let _ = write!(out, ",omega_amp_{id}");
    }
    out.push('\n');
    let duration = traj.duration();
    for k in 1..n.div_ceil(2) {
        let _ = write!(out, "{k},{}", num(k as f64 / duration));
        for amp in &amplitudes {
            let _ = write!(out, ",{}", num(amp[k]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Everything `run_scenario` produced, in memory.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub learned: DynParams,
    pub scan: ScanResult,
    pub summary: ScanSummary,
    pub output_dir: PathBuf,
}

fn simulate(case: &GridCase, model: &ReducedModel, params: &DynParams, forcing: Option<&ForcingSpec>, cfg: &SimConfig, full_dae: bool) -> Result<Trajectory> {
    if full_dae {
        simulate_full_dae(case, params, forcing, cfg)
    } else {
        simulate_reduced(model, params, forcing, cfg, &case.name)
    }
}

/// Runs simulate (ambient) → learn → simulate (forced) → localize → report
/// and writes every artifact under the scenario's output directory.
pub fn run_scenario(loaded: &LoadedScenario) -> Result<ScenarioOutcome> {
    let sc = &loaded.scenario;
    sc.validate()?;
    let provenance = Provenance::new(Some(loaded.hash.clone()));
    let out_dir = loaded.output_dir();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let case = load_case(loaded.case_path()).map_err(|e| e.in_stage("load case"))?;
    let model = kron_reduce(&build_laplacian(&case)).map_err(|e| e.in_stage("reduce"))?;
    let truth = DynParams::from_case(&case, sc.sigma).map_err(|e| e.in_stage("load case"))?;

    let stamp = |mut t: Trajectory| {
        t.meta.version = Some(VERSION.to_string());
        t.meta.scenario_hash = Some(loaded.hash.clone());
        t
    };

    let ambient_cfg = SimConfig::new(sc.ambient.duration, sc.ambient.rate, sc.ambient.seed);
    let ambient = simulate(&case, &model, &truth, None, &ambient_cfg, sc.full_dae)
        .map(stamp)
        .map_err(|e| e.in_stage("simulate ambient"))?;
    write_trajectory(&ambient, out_dir.join("ambient.csv")).map_err(|e| e.in_stage("simulate ambient"))?;

    let (learned, moments) = learn(&ambient, &model).map_err(|e| e.in_stage("learn"))?;
    let mut params_file = ParamsFile::new(&model.gen_ids, &learned, Some(&moments));
    params_file.provenance = Some(provenance.clone());
    params_file.write(out_dir.join("params.json")).map_err(|e| e.in_stage("learn"))?;

    let event_cfg = SimConfig::new(sc.event.duration, sc.event.rate, sc.event.seed);
    let forced = simulate(&case, &model, &truth, Some(&sc.event.forcing), &event_cfg, sc.full_dae)
        .map(stamp)
        .map_err(|e| e.in_stage("simulate event"))?;
    write_trajectory(&forced, out_dir.join("forced.csv")).map_err(|e| e.in_stage("simulate event"))?;

    let scan_result = (|| {
        let mut cache = spectral_stats(&forced, None)?;
        if let Some([fmin, fmax]) = sc.band {
            cache.bins = cache.band(fmin, fmax);
        }
        scan(&cache, &model, &learned, &model.bus_ids(), None)
    })()
    .map_err(|e| e.in_stage("localize"))?;
    write_scan_csv(&scan_result, out_dir.join("scan.csv"), None, &provenance).map_err(|e| e.in_stage("localize"))?;

    emit_report(&scan_result, &forced, &out_dir, &provenance).map_err(|e| e.in_stage("report"))?;
    let summary = ScanSummary::from_scan(&scan_result, provenance)?;
    Ok(ScenarioOutcome { learned, scan: scan_result, summary, output_dir: out_dir })
}

/// JSON text of a reduced model, matrices as row-major nested arrays with 17
/// significant digits.
pub fn reduced_model_json(model: &ReducedModel) -> String {
    fn matrix(m: &nalgebra::DMatrix<f64>) -> String {
        let rows: Vec<String> = (0..m.nrows())
            .map(|i| {
                let cells: Vec<String> = m.row(i).iter().map(|v| num(*v)).collect();
                format!("[{}]", cells.join(", "))
            })
            .collect();
        format!("[{}]", rows.join(", "))
    }
    fn ids(v: &[BusId]) -> String {
        let cells: Vec<String> = v.iter().map(|id| id.to_string()).collect();
        format!("[{}]", cells.join(", "))
    }
    let p: Vec<String> = model.p_reduced.iter().map(|v| num(*v)).collect();
    format!(
        "{{\n  \"gen_ids\": {},\n  \"load_ids\": {},\n  \"l_reduced\": {},\n  \"sigma_shape\": {},\n  \"gamma\": {},\n  \"p_reduced\": [{}],\n  \"version\": \"{VERSION}\"\n}}\n",
        ids(&model.gen_ids),
        ids(&model.load_ids),
        matrix(&model.l_reduced),
        matrix(&model.sigma_shape),
        matrix(&model.gamma),
        p.join(", ")
    )
}
