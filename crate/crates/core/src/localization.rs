//! Forced-oscillation likelihood scan over (source bus, frequency bin).
//!
//! For a hypothesis `(l, k)` the per-sample log-likelihood is
//!
//! ```text
//! -(1/n) Σ_i (r_i - s γ w c_i)ᵀ Σ⁻¹ (r_i - s γ w c_i),   c_i = cos(2π(k i/n + φ))
//! ```
//!
//! where `r_i = Δ₂ + M⁻¹L^r θ_i + M⁻¹D ω_i` is the frequency-block residual of
//! the unforced model, `w = M⁻¹Γ_l` and `s` is the source sign. Writing
//! `z = wᵀΣ⁻¹ r̃(k)` with the DFT `r̃(k) = n^{-1/2} Σ e^{+2πjki/n} r_i`, the
//! maximum over `φ` and `γ ≥ 0` is attained at
//!
//! ```text
//! φ̂ = -arg(s z) / 2π,   γ̂ = 2|z| / (√n a),   a = wᵀΣ⁻¹w
//! ```
//!
//! and the likelihood rises above its `γ = 0` baseline by `2|z|²/(n a)`.
//!
//! The finite differences consume one sample, so a trajectory of `N` samples
//! yields `n = N - 1` residuals and bin `k` sits at `k / (n τ)` Hz.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BusId;
use crate::reduction::{degeneracy_groups, ReducedModel, DEFAULT_DEGENERACY_TOL};
use crate::simulator::DynParams;
use crate::trajectory::Trajectory;

/// DFTs of the aligned state and finite-difference series.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    /// Series length after alignment (`N - 1`).
    pub n: usize,
    pub dt: f64,
    pub gen_ids: Vec<BusId>,
    /// Row `k` holds `X̃(k)` for every bin `0..n`.
    pub x_tilde: DMatrix<Complex64>,
    pub d_tilde: DMatrix<Complex64>,
    /// Bins available for scanning, a subrange of `1..(n+1)/2`.
    pub bins: Range<usize>,
}

impl SpectralCache {
    pub fn n_gen(&self) -> usize {
        self.gen_ids.len()
    }

    /// Every admissible bin `0 < k < n/2`.
    pub fn full_bin_range(n: usize) -> Range<usize> {
        1..n.div_ceil(2)
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 / (self.n as f64 * self.dt)
    }

    /// Bins whose frequency lies in `[fmin, fmax]`.
    pub fn band(&self, fmin: f64, fmax: f64) -> Range<usize> {
        let full = Self::full_bin_range(self.n);
        let scale = self.n as f64 * self.dt;
        let lo = ((fmin * scale).ceil().max(full.start as f64)) as usize;
        let hi = ((fmax * scale).floor() + 1.0).min(full.end as f64).max(0.0) as usize;
        lo..hi.max(lo)
    }

    fn x_at(&self, bin: usize) -> DVector<Complex64> {
        self.x_tilde.row(bin).transpose()
    }

    fn d_at(&self, bin: usize) -> DVector<Complex64> {
        self.d_tilde.row(bin).transpose()
    }

    /// `E(k) = Re[Δ̃ X̃†]`.
    pub fn e(&self, bin: usize) -> DMatrix<f64> {
        outer_re(&self.d_at(bin), &self.x_at(bin))
    }

    /// `G(k) = Re[X̃ X̃†]`.
    pub fn g(&self, bin: usize) -> DMatrix<f64> {
        let x = self.x_at(bin);
        outer_re(&x, &x)
    }

    /// `H(k) = Re[Δ̃ Δ̃†]`.
    pub fn h(&self, bin: usize) -> DMatrix<f64> {
        let d = self.d_at(bin);
        outer_re(&d, &d)
    }

    /// `Σ_k ‖X̃(k)‖²` over all bins.
    pub fn spectral_energy(&self) -> f64 {
        self.x_tilde.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn outer_re(a: &DVector<Complex64>, b: &DVector<Complex64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| (a[i] * b[j].conj()).re)
}

/// DFT with the positive-exponent convention, normalized by `n^{-1/2}`.
fn positive_dft(columns: &DMatrix<f64>) -> DMatrix<Complex64> {
    let n = columns.nrows();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let norm = (n as f64).sqrt().recip();
    let mut out = DMatrix::zeros(n, columns.ncols());
    let mut buffer = vec![Complex64::default(); n];
    for c in 0..columns.ncols() {
        for (slot, v) in buffer.iter_mut().zip(columns.column(c).iter()) {
            *slot = Complex64::new(*v, 0.0);
        }
        fft.process(&mut buffer);
        // Real input: the positive exponent is the conjugate of the forward FFT.
        for (k, v) in buffer.iter().enumerate() {
            out[(k, c)] = v.conj() * norm;
        }
    }
    out
}

pub fn spectral_stats(traj: &Trajectory, bins: Option<Range<usize>>) -> Result<SpectralCache> {
    traj.validate()?;
    let g = traj.n_gen();
    let n = traj.n_samples() - 1;
    let full = SpectralCache::full_bin_range(n);
    let bins = bins.unwrap_or_else(|| full.clone());
    if bins.is_empty() || full.is_empty() {
        return Err(Error::EmptyBinRange);
    }
    if bins.start < full.start || bins.end > full.end {
        return Err(Error::InvalidParameter(format!(
            "bins {bins:?} fall outside 0 < k < n/2 = {}",
            n as f64 / 2.0
        )));
    }

    let mut x = DMatrix::zeros(n, 2 * g);
    let mut d = DMatrix::zeros(n, 2 * g);
    for i in 0..n {
        for j in 0..g {
            x[(i, j)] = traj.theta[(i, j)];
            x[(i, g + j)] = traj.omega[(i, j)];
            d[(i, j)] = (traj.theta[(i + 1, j)] - traj.theta[(i, j)]) / traj.dt;
            d[(i, g + j)] = (traj.omega[(i + 1, j)] - traj.omega[(i, j)]) / traj.dt;
        }
    }

    Ok(SpectralCache {
        n,
        dt: traj.dt,
        gen_ids: traj.gen_ids.clone(),
        x_tilde: positive_dft(&x),
        d_tilde: positive_dft(&d),
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hypothesis {
    pub source: BusId,
    pub bin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    /// Per-sample log-likelihood at the optimal amplitude and phase.
    pub loglik: f64,
    /// The same quantity evaluated with unit noise scale; ranks hypotheses.
    pub score: f64,
    pub gamma_hat: f64,
    /// Cycles in `[0, 1)`.
    pub phi_hat: f64,
}

struct SourceTerm {
    id: BusId,
    sign: f64,
    /// `M⁻¹Γ_l`.
    direction: DVector<f64>,
    /// `wᵀ S⁻¹ w` with the unit-scale covariance `S`.
    weight: f64,
}

/// Precomputed state shared by every hypothesis of one scan.
pub struct Localizer<'a> {
    cache: &'a SpectralCache,
    model: &'a ReducedModel,
    sigma: f64,
    shape_inv: DMatrix<f64>,
    /// `S⁻¹ r̃(k)` for `k` in `cache.bins`.
    whitened: Vec<DVector<Complex64>>,
    residual: Vec<DVector<Complex64>>,
    baseline: f64,
}

impl<'a> Localizer<'a> {
    pub fn new(cache: &'a SpectralCache, model: &'a ReducedModel, params: &DynParams) -> Result<Self> {
        params.validate()?;
        let g = model.n_gen();
        if cache.gen_ids != model.gen_ids || params.n_gen() != g {
            return Err(Error::InvalidParameter(
                "trajectory, model and parameters disagree on the generator set".into(),
            ));
        }
        let chol = nalgebra::Cholesky::new(model.sigma_shape.clone())
            .ok_or(Error::CovarianceNotPositiveDefinite)?;
        let shape_inv = chol.inverse();
        let shape_inv_c = shape_inv.map(|v| Complex64::new(v, 0.0));

        let coupling = DMatrix::from_fn(g, g, |i, j| {
            Complex64::new(model.l_reduced[(i, j)] / params.inertia[i], 0.0)
        });
        let friction: Vec<f64> = (0..g).map(|i| params.damping[i] / params.inertia[i]).collect();
        let residual_at = |k: usize| -> DVector<Complex64> {
            let x = cache.x_tilde.row(k);
            let d = cache.d_tilde.row(k);
            let theta = DVector::from_fn(g, |i, _| x[i]);
            let mut r = &coupling * theta;
            for i in 0..g {
                r[i] += d[g + i] + x[g + i] * friction[i];
            }
            r
        };

        let mut total = 0.0;
        for k in 0..cache.n {
            let r = residual_at(k);
            total += r.dotc(&(&shape_inv_c * &r)).re;
        }
        let baseline = -total / cache.n as f64;

        let residual: Vec<_> = cache.bins.clone().map(residual_at).collect();
        let whitened = residual.iter().map(|r| &shape_inv_c * r).collect();
        Ok(Localizer { cache, model, sigma: params.sigma, shape_inv, whitened, residual, baseline })
    }

    /// Log-likelihood with `γ = 0`, unit noise scale.
    pub fn baseline_score(&self) -> f64 {
        self.baseline
    }

    fn source_term(&self, params_inertia: &[f64], id: BusId) -> Result<SourceTerm> {
        let col = self.model.column_of(id)?;
        let direction = DVector::from_fn(self.model.n_gen(), |i, _| {
            self.model.gamma[(i, col)] / params_inertia[i]
        });
        let weight = direction.dot(&(&self.shape_inv * &direction));
        Ok(SourceTerm { id, sign: self.model.source_sign(id)?, direction, weight })
    }

    fn bin_slot(&self, bin: usize) -> Result<usize> {
        if self.cache.bins.contains(&bin) {
            Ok(bin - self.cache.bins.start)
        } else {
            Err(Error::InvalidParameter(format!(
                "bin {bin} outside cached range {:?}",
                self.cache.bins
            )))
        }
    }

    fn fit_slot(&self, term: &SourceTerm, slot: usize) -> Fit {
        let n = self.cache.n as f64;
        let y = &self.whitened[slot];
        let z: Complex64 = term
            .direction
            .iter()
            .zip(y.iter())
            .map(|(w, v)| v * *w)
            .sum();
        let (gamma_hat, gain) = if term.weight > 0.0 {
            (2.0 * z.norm() / (n.sqrt() * term.weight), 2.0 * z.norm_sqr() / (n * term.weight))
        } else {
            (0.0, 0.0)
        };
        let mut phi_hat = (-(z * term.sign).arg() / (2.0 * PI)).rem_euclid(1.0);
        if phi_hat >= 1.0 {
            phi_hat = 0.0;
        }
        let score = self.baseline + gain;
        Fit { loglik: score / (self.sigma * self.sigma), score, gamma_hat, phi_hat }
    }

    pub fn fit(&self, params: &DynParams, hyp: Hypothesis) -> Result<Fit> {
        let term = self.source_term(&params.inertia, hyp.source)?;
        Ok(self.fit_slot(&term, self.bin_slot(hyp.bin)?))
    }

    /// `|wᵀS⁻¹r̃(k)|²` rebuilt from the real moment matrices `E`, `G`, `H`:
    /// `cᵀ Re(r̃ r̃†) c` with `c = S⁻¹w`. Cross-checks the phase elimination.
    pub fn projection_power_from_moments(&self, params: &DynParams, hyp: Hypothesis) -> Result<f64> {
        self.bin_slot(hyp.bin)?;
        let g = self.model.n_gen();
        let term = self.source_term(&params.inertia, hyp.source)?;
        let c = &self.shape_inv * &term.direction;
        let (e, gm, h) = (self.cache.e(hyp.bin), self.cache.g(hyp.bin), self.cache.h(hyp.bin));
        let block = |m: &DMatrix<f64>, r: usize, s: usize| m.view((r * g, s * g), (g, g)).into_owned();
        let k = DMatrix::from_fn(g, g, |i, j| self.model.l_reduced[(i, j)] / params.inertia[i]);
        let j = DMatrix::from_diagonal(&DVector::from_fn(g, |i, _| params.damping[i] / params.inertia[i]));
        let (e21, e22) = (block(&e, 1, 0), block(&e, 1, 1));
        let cross = &e21 * k.transpose() + &e22 * j.transpose();
        let second = block(&h, 1, 1)
            + &k * block(&gm, 0, 0) * k.transpose()
            + &k * block(&gm, 0, 1) * j.transpose()
            + &j * block(&gm, 1, 0) * k.transpose()
            + &j * block(&gm, 1, 1) * j.transpose()
            + &cross
            + cross.transpose();
        Ok(c.dot(&(second * &c)))
    }

    /// Residual spectrum `r̃(k)` (frequency block) for a cached bin.
    pub fn residual_spectrum(&self, bin: usize) -> Result<DVector<Complex64>> {
        Ok(self.residual[self.bin_slot(bin)?].clone())
    }
}

pub fn likelihood_at(
    cache: &SpectralCache,
    model: &ReducedModel,
    params: &DynParams,
    hyp: Hypothesis,
) -> Result<Fit> {
    let bins = hyp.bin..hyp.bin + 1;
    if !SpectralCache::full_bin_range(cache.n).contains(&hyp.bin) {
        return Err(Error::InvalidParameter(format!("bin {} outside 0 < k < n/2", hyp.bin)));
    }
    let narrowed = SpectralCache { bins, ..cache.clone() };
    Localizer::new(&narrowed, model, params)?.fit(params, hyp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub source: BusId,
    pub bin: usize,
    pub frequency: f64,
    pub loglik: f64,
    pub score: f64,
    pub gamma_hat: f64,
    pub phi_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Ordered by `(source, bin)`.
    pub entries: Vec<ScanEntry>,
    /// Indices into `entries`, best first; ties broken by `(source, bin)`.
    pub ranking: Vec<usize>,
    /// Candidates sharing the winner's forcing gain up to sign.
    pub winner_group: Vec<BusId>,
    pub sigma: f64,
    pub n: usize,
}

impl ScanResult {
    pub fn winner(&self) -> Option<&ScanEntry> {
        self.ranking.first().map(|&i| &self.entries[i])
    }

    pub fn ranked(&self) -> impl Iterator<Item = &ScanEntry> {
        self.ranking.iter().map(|&i| &self.entries[i])
    }

    /// Best entry whose source lies outside the winner's degeneracy group.
    pub fn runner_up(&self) -> Option<&ScanEntry> {
        self.ranked().find(|e| !self.winner_group.contains(&e.source))
    }

    /// Per-sample log-likelihood gap between winner and runner-up.
    pub fn runner_up_gap(&self) -> Option<f64> {
        Some(self.winner()?.loglik - self.runner_up()?.loglik)
    }

    /// Best entry for one source.
    pub fn best_for(&self, source: BusId) -> Option<&ScanEntry> {
        self.ranked().find(|e| e.source == source)
    }
}

/// Evaluates every `(source, bin)` pair in `candidates x bins`.
///
/// `bins` defaults to the cache's range. Cells are evaluated in parallel on
/// the current rayon pool; the result does not depend on the thread count.
pub fn scan(
    cache: &SpectralCache,
    model: &ReducedModel,
    params: &DynParams,
    candidates: &[BusId],
    bins: Option<Range<usize>>,
) -> Result<ScanResult> {
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidate sources".into()));
    }
    let bins = bins.unwrap_or_else(|| cache.bins.clone());
    if bins.is_empty() {
        return Err(Error::EmptyBinRange);
    }
    if bins.start < cache.bins.start || bins.end > cache.bins.end {
        return Err(Error::InvalidParameter(format!(
            "bins {bins:?} outside cached range {:?}",
            cache.bins
        )));
    }
    let localizer = Localizer::new(cache, model, params)?;
    let terms = candidates
        .iter()
        .map(|&id| localizer.source_term(&params.inertia, id))
        .collect::<Result<Vec<_>>>()?;

    let entries: Vec<ScanEntry> = terms
        .par_iter()
        .flat_map_iter(|term| {
            let localizer = &localizer;
            bins.clone().map(move |bin| {
                let fit = localizer.fit_slot(term, bin - cache.bins.start);
                ScanEntry {
                    source: term.id,
                    bin,
                    frequency: cache.frequency(bin),
                    loglik: fit.loglik,
                    score: fit.score,
                    gamma_hat: fit.gamma_hat,
                    phi_hat: fit.phi_hat,
                }
            })
        })
        .collect();

    let mut ranking: Vec<usize> = (0..entries.len()).collect();
    ranking.sort_by(|&a, &b| {
        let (ea, eb) = (&entries[a], &entries[b]);
        eb.score
            .total_cmp(&ea.score)
            .then(ea.source.cmp(&eb.source))
            .then(ea.bin.cmp(&eb.bin))
    });

    let top = entries[ranking[0]].source;
    let winner_group = degeneracy_groups(model, DEFAULT_DEGENERACY_TOL)
        .into_iter()
        .find(|g| g.contains(&top))
        .unwrap_or_else(|| vec![top])
        .into_iter()
        .filter(|id| candidates.contains(id))
        .collect();

    Ok(ScanResult { entries, ranking, winner_group, sigma: params.sigma, n: cache.n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::TrajectoryMeta;

    fn traj_from(theta: DMatrix<f64>, omega: DMatrix<f64>) -> Trajectory {
        let g = theta.ncols();
        Trajectory { dt: 0.02, gen_ids: (1..=g as u32).collect(), theta, omega, meta: TrajectoryMeta::default() }
    }

    #[test]
    fn constant_signal_has_no_ac_content() {
        let traj = traj_from(DMatrix::from_element(64, 2, 0.7), DMatrix::from_element(64, 2, -1.3));
        let cache = spectral_stats(&traj, None).unwrap();
        assert_eq!(cache.n, 63);
        for k in 1..cache.n {
            assert!(cache.x_tilde.row(k).iter().all(|c| c.norm() < 1e-12));
            assert!(cache.d_tilde.row(k).iter().all(|c| c.norm() < 1e-12));
        }
    }

    #[test]
    fn cosine_concentrates_in_its_bin() {
        let n_samples = 257; // n = 256 after alignment
        let k0 = 19;
        let theta = DMatrix::from_fn(n_samples, 1, |i, _| (2.0 * PI * k0 as f64 * i as f64 / 256.0).cos());
        let cache = spectral_stats(&traj_from(theta.clone(), theta), None).unwrap();
        let peak = cache.x_tilde[(k0, 0)].norm();
        assert!((peak - 16.0 / 2.0).abs() < 1e-9, "{peak}");
        assert!(cache.x_tilde[(k0 + 3, 0)].norm() < 1e-9);
    }

    #[test]
    fn parseval() {
        let theta = DMatrix::from_fn(101, 2, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0 + 0.1 * i as f64);
        let omega = DMatrix::from_fn(101, 2, |i, j| ((i * 3 + j) as f64).sin());
        let cache = spectral_stats(&traj_from(theta.clone(), omega.clone()), None).unwrap();
        let time: f64 = theta.rows(0, 100).iter().chain(omega.rows(0, 100).iter()).map(|v| v * v).sum();
        assert!((cache.spectral_energy() - time).abs() < 1e-8 * time);
    }

    #[test]
    fn bin_ranges() {
        let traj = traj_from(DMatrix::from_element(11, 1, 1.0), DMatrix::from_element(11, 1, 0.0));
        let cache = spectral_stats(&traj, None).unwrap();
        assert_eq!(cache.bins, 1..5);
        assert!(matches!(spectral_stats(&traj, Some(3..3)), Err(Error::EmptyBinRange)));
        assert!(spectral_stats(&traj, Some(0..3)).is_err());
        assert!(spectral_stats(&traj, Some(1..6)).is_err());
        // n = 10, dt = 0.02: bins are 5 Hz apart.
        assert_eq!(cache.band(4.0, 16.0), 1..4);
        assert_eq!(cache.band(100.0, 200.0).len(), 0);
    }
}
