//! Euler–Maruyama integration of the linearized swing dynamics.
//!
//! Two integrators share one noise stream: [`simulate_reduced`] steps the
//! Kron-reduced generator dynamics directly, while [`simulate_full_dae`]
//! solves the algebraic load equations at every step. In the linear model
//! the two produce the same generator trajectories up to rounding.
//!
//! All states are deviations from the operating point and start at zero.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_laplacian, BusId, GridCase};
use crate::reduction::{forcing_gain, ReducedModel};
use crate::trajectory::{Trajectory, TrajectoryMeta};

/// Diagonal inertia and damping of the generators plus the noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynParams {
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
    pub sigma: f64,
}

impl DynParams {
    pub fn new(inertia: Vec<f64>, damping: Vec<f64>, sigma: f64) -> Result<Self> {
        let params = DynParams { inertia, damping, sigma };
        params.validate()?;
        Ok(params)
    }

    /// Ground-truth parameters stored on the case's generator buses.
    pub fn from_case(case: &GridCase, sigma: f64) -> Result<Self> {
        let (inertia, damping) = case.true_dynamics().ok_or_else(|| {
            Error::InvalidParameter(format!(
                "case {} does not carry inertia and damping for every generator",
                case.name
            ))
        })?;
        Self::new(inertia, damping, sigma)
    }

    /// Parameters for a noise-free simulation (`sigma = 0`). Only the
    /// simulators accept these.
    pub fn noise_free(inertia: Vec<f64>, damping: Vec<f64>) -> Result<Self> {
        let params = DynParams { inertia, damping, sigma: 0.0 };
        params.validate_dynamics()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_dynamics()?;
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter("sigma must be strictly positive".into()));
        }
        Ok(())
    }

    fn validate_for_simulation(&self) -> Result<()> {
        self.validate_dynamics()?;
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter("sigma must be non-negative".into()));
        }
        Ok(())
    }

    fn validate_dynamics(&self) -> Result<()> {
        if self.inertia.len() != self.damping.len() {
            return Err(Error::InvalidParameter(
                "inertia and damping lengths differ".into(),
            ));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !self.inertia.iter().chain(&self.damping).all(|&v| positive(v)) {
            return Err(Error::InvalidParameter(
                "inertia and damping must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_gen(&self) -> usize {
        self.inertia.len()
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        DynParams { sigma, ..self.clone() }
    }

    fn check_dims(&self, n_gen: usize) -> Result<()> {
        if self.n_gen() != n_gen {
            return Err(Error::InvalidParameter(format!(
                "parameters describe {} generators, model has {n_gen}",
                self.n_gen()
            )));
        }
        Ok(())
    }
}

/// A sinusoidal injection `γ cos(2π(f t + φ))` at one bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    pub source: BusId,
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
    /// Cycles, in `[0, 1)`.
    pub phase: f64,
}

impl ForcingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::InvalidParameter("forcing amplitude must be >= 0".into()));
        }
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(Error::InvalidParameter("forcing frequency must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.phase) {
            return Err(Error::InvalidParameter("forcing phase must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn waveform(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * (self.frequency * t + self.phase)).cos()
    }
}

/// Parses `source=<id>,freq=<Hz>,amp=<γ>,phase=<cycles>`; `phase` is optional.
impl FromStr for ForcingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut source = None;
        let mut frequency = None;
        let mut amplitude = None;
        let mut phase = 0.0;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("forcing field {part:?} is not key=value"))
            })?;
            let bad = |_| Error::InvalidParameter(format!("cannot parse forcing field {part:?}"));
            match key.trim() {
                "source" => source = Some(value.trim().parse::<BusId>().map_err(|_| bad(()))?),
                "freq" => frequency = Some(value.trim().parse::<f64>().map_err(|_| bad(()))?),
                "amp" => amplitude = Some(value.trim().parse::<f64>().map_err(|_| bad(()))?),
                "phase" => phase = value.trim().parse::<f64>().map_err(|_| bad(()))?,
                other => {
                    return Err(Error::InvalidParameter(format!("unknown forcing field {other:?}")))
                }
            }
        }
        let missing = |f: &str| Error::InvalidParameter(format!("forcing is missing {f}="));
        let spec = ForcingSpec {
            source: source.ok_or_else(|| missing("source"))?,
            frequency: frequency.ok_or_else(|| missing("freq"))?,
            amplitude: amplitude.ok_or_else(|| missing("amp"))?,
            phase,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ForcingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "source={},freq={},amp={},phase={}",
            self.source, self.frequency, self.amplitude, self.phase
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Seconds of recorded data.
    pub duration: f64,
    /// Sampling rate in Hz; the integration step is its inverse.
    pub rate: f64,
    pub seed: u64,
    /// Seconds simulated and discarded before recording starts.
    #[serde(default)]
    pub burn_in: f64,
}

impl SimConfig {
    pub fn new(duration: f64, rate: f64, seed: u64) -> Self {
        SimConfig { duration, rate, seed, burn_in: 0.0 }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }

    fn sample_count(&self, seconds: f64) -> Result<usize> {
        let exact = seconds * self.rate;
        let rounded = exact.round();
        if !exact.is_finite() || (exact - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::NonIntegralSamples { duration: seconds, rate: self.rate });
        }
        Ok(rounded as usize)
    }

    fn steps(&self, forcing: Option<&ForcingSpec>) -> Result<(usize, usize)> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::InvalidParameter("rate must be positive".into()));
        }
        if !(self.duration > 0.0) || !(self.burn_in >= 0.0) {
            return Err(Error::InvalidParameter(
                "duration must be positive and burn-in non-negative".into(),
            ));
        }
        if let Some(f) = forcing {
            f.validate()?;
            if self.rate <= 2.0 * f.frequency {
                return Err(Error::Nyquist { rate: self.rate, frequency: f.frequency });
            }
        }
        let recorded = self.sample_count(self.duration)?;
        if recorded < 2 {
            return Err(Error::InvalidParameter("need at least two samples".into()));
        }
        Ok((self.sample_count(self.burn_in)?, recorded))
    }
}

/// Standard-normal draws keyed by `(seed, step, bus)`.
///
/// Each step owns an independent ChaCha stream, read in canonical bus order
/// (generators, then loads), so any integrator asking for step `i` sees the
/// same numbers regardless of what it consumed before.
#[derive(Debug, Clone, Copy)]
pub struct NoiseStream {
    seed: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream { seed }
    }

    /// Unit-variance draws for one step: `(generators, loads)`.
    pub fn step(&self, step: u64, n_gen: usize, n_load: usize) -> (DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let gens = DVector::from_fn(n_gen, |_, _| draw());
        let loads = DVector::from_fn(n_load, |_, _| draw());
        (gens, loads)
    }
}

struct Recorder {
    theta: DMatrix<f64>,
    omega: DMatrix<f64>,
    skip: usize,
}

impl Recorder {
    fn new(skip: usize, n: usize, g: usize) -> Self {
        Recorder { theta: DMatrix::zeros(n, g), omega: DMatrix::zeros(n, g), skip }
    }

    fn record(&mut self, step: usize, theta: &DVector<f64>, omega: &DVector<f64>) {
        if step >= self.skip {
            let row = step - self.skip;
            self.theta.set_row(row, &theta.transpose());
            self.omega.set_row(row, &omega.transpose());
        }
    }
}

fn build_meta(
    case: &str,
    method: &str,
    params: &DynParams,
    forcing: Option<&ForcingSpec>,
    cfg: &SimConfig,
) -> TrajectoryMeta {
    TrajectoryMeta {
        seed: Some(cfg.seed),
        case: Some(case.to_string()),
        method: Some(method.to_string()),
        forcing: forcing.copied(),
        params: Some(params.clone()),
        burn_in: cfg.burn_in,
        initial_state: Some("equilibrium".to_string()),
        ..TrajectoryMeta::default()
    }
}

/// Integrates the Kron-reduced generator dynamics.
///
/// `case_name` is only recorded in the trajectory metadata.
pub fn simulate_reduced(
    model: &ReducedModel,
    params: &DynParams,
    forcing: Option<&ForcingSpec>,
    cfg: &SimConfig,
    case_name: &str,
) -> Result<Trajectory> {
    params.validate_for_simulation()?;
    params.check_dims(model.n_gen())?;
    let (skip, recorded) = cfg.steps(forcing)?;
    let g = model.n_gen();
    let n_load = model.load_ids.len();
    let tau = cfg.dt();
    let noise_scale = params.sigma * tau.sqrt();

    let forcing_vec = match forcing {
        Some(f) => Some((forcing_gain(model, f.source)? * model.source_sign(f.source)?, *f)),
        None => None,
    };
    let transfer = model.load_transfer();
    let inv_m = DVector::from_iterator(g, params.inertia.iter().map(|m| m.recip()));
    let damping = DVector::from_vec(params.damping.clone());

    let noise = NoiseStream::new(cfg.seed);
    let total = skip + recorded;
    let mut rec = Recorder::new(skip, recorded, g);
    let mut theta = DVector::zeros(g);
    let mut omega = DVector::zeros(g);
    for step in 0..total {
        rec.record(step, &theta, &omega);
        if step + 1 == total {
            break;
        }
        let t = step as f64 * tau;
        let mut force = -(&model.l_reduced * &theta) - damping.component_mul(&omega);
        if let Some((gain, spec)) = &forcing_vec {
            force.axpy(spec.waveform(t), gain, 1.0);
        }
        let (eta_g, eta_l) = noise.step(step as u64, g, n_load);
        let kick = (eta_g + &transfer * eta_l) * noise_scale;
        let next_omega = &omega + (force * tau + kick).component_mul(&inv_m);
        theta.axpy(tau, &omega, 1.0);
        omega = next_omega;
    }

    Ok(Trajectory {
        dt: tau,
        gen_ids: model.gen_ids.clone(),
        theta: rec.theta,
        omega: rec.omega,
        meta: build_meta(case_name, "reduced", params, forcing, cfg),
    })
}

/// Integrates the generator swing equations while solving the algebraic
/// load equations at every step. Returns generator states only.
pub fn simulate_full_dae(
    case: &GridCase,
    params: &DynParams,
    forcing: Option<&ForcingSpec>,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    params.validate_for_simulation()?;
    let blocks = build_laplacian(case);
    let g = blocks.n_gen();
    let n_load = blocks.n_load();
    params.check_dims(g)?;
    let (skip, recorded) = cfg.steps(forcing)?;
    let tau = cfg.dt();
    // Per-step impulses η σ√τ expressed as a rate over the step.
    let rate_scale = params.sigma / tau.sqrt();

    let chol: Option<Cholesky<f64, Dyn>> = if n_load > 0 {
        Some(Cholesky::new(blocks.ll.clone()).ok_or(Error::LoadIsland)?)
    } else {
        None
    };
    let source = match forcing {
        Some(f) => {
            let gen_pos = blocks.gen_ids.iter().position(|&id| id == f.source);
            let load_pos = blocks.load_ids.iter().position(|&id| id == f.source);
            match (gen_pos, load_pos) {
                (Some(i), _) => Some((true, i, *f)),
                (None, Some(i)) => Some((false, i, *f)),
                _ => return Err(Error::UnknownBus(f.source)),
            }
        }
        None => None,
    };
    let inv_m = DVector::from_iterator(g, params.inertia.iter().map(|m| m.recip()));
    let damping = DVector::from_vec(params.damping.clone());

    let noise = NoiseStream::new(cfg.seed);
    let total = skip + recorded;
    let mut rec = Recorder::new(skip, recorded, g);
    let mut theta = DVector::zeros(g);
    let mut omega = DVector::zeros(g);
    for step in 0..total {
        rec.record(step, &theta, &omega);
        if step + 1 == total {
            break;
        }
        let t = step as f64 * tau;
        let (eta_g, eta_l) = noise.step(step as u64, g, n_load);
        let mut gen_injection = eta_g * rate_scale;
        let mut load_injection = eta_l * rate_scale;
        if let Some((at_gen, idx, spec)) = &source {
            let value = spec.waveform(t);
            if *at_gen {
                gen_injection[*idx] += value;
            } else {
                load_injection[*idx] += value;
            }
        }

        let mut force = -(&blocks.gg * &theta) - damping.component_mul(&omega) + gen_injection;
        if let Some(chol) = &chol {
            let load_theta = chol.solve(&(load_injection - &blocks.lg * &theta));
            force -= &blocks.gl * load_theta;
        }
        let next_omega = &omega + (force * tau).component_mul(&inv_m);
        theta.axpy(tau, &omega, 1.0);
        omega = next_omega;
    }

    Ok(Trajectory {
        dt: tau,
        gen_ids: blocks.gen_ids.clone(),
        theta: rec.theta,
        omega: rec.omega,
        meta: build_meta(&case.name, "full_dae", params, forcing, cfg),
    })
}
