//! Inertia and damping from ambient data by the method of moments.
//!
//! With `X = [θ; ω]` and finite differences `Δ_i = (X_{i+1} - X_i)/τ`, the
//! Euler–Maruyama recursion gives `E[Δ Xᵀ] = A E[X Xᵀ]`, so
//! `Â = S₁ S₀⁻¹`. The lower blocks of `Â` estimate `-M⁻¹L^r` and `-M⁻¹D`;
//! since `L^r` is known, each generator's inertia follows from a one-row
//! least-squares fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduction::ReducedModel;
use crate::simulator::DynParams;
use crate::trajectory::Trajectory;

/// S₀ condition numbers above this are treated as unexcited data.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    /// `E[X Xᵀ]`.
    pub s0: DMatrix<f64>,
    /// `E[Δ Xᵀ]`.
    pub s1: DMatrix<f64>,
    /// `E[Δ Δᵀ]`, used for the residual covariance.
    pub s2: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub n_used: usize,
    pub dt: f64,
    pub condition_number: f64,
}

pub fn empirical_moments(traj: &Trajectory) -> Result<MomentEstimates> {
    traj.validate()?;
    let g = traj.n_gen();
    let dim = 2 * g;
    let n = traj.n_samples();
    if n < dim + 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least {} samples for {g} generators, got {n}",
            dim + 2
        )));
    }
    let n_used = n - 1;
    let dt = traj.dt;

    let mut s0 = DMatrix::zeros(dim, dim);
    let mut s1 = DMatrix::zeros(dim, dim);
    let mut s2 = DMatrix::zeros(dim, dim);
    let mut current = traj.state(0);
    for i in 0..n_used {
        let next = traj.state(i + 1);
        let delta = (&next - &current) / dt;
        s0.ger(1.0, &current, &current, 1.0);
        s1.ger(1.0, &delta, &current, 1.0);
        s2.ger(1.0, &delta, &delta, 1.0);
        current = next;
    }
    let scale = 1.0 / n_used as f64;
    s0 *= scale;
    s1 *= scale;
    s2 *= scale;

    let singular = s0.singular_values();
    let (smax, smin) = (singular.max(), singular.min());
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition_number <= MAX_CONDITION) {
        return Err(Error::InsufficientExcitation { condition: condition_number, limit: MAX_CONDITION });
    }

    // Â S₀ = S₁  ⇔  S₀ Âᵀ = S₁ᵀ (S₀ symmetric).
    let a_hat = s0
        .clone()
        .lu()
        .solve(&s1.transpose())
        .ok_or(Error::InsufficientExcitation { condition: f64::INFINITY, limit: MAX_CONDITION })?
        .transpose();

    Ok(MomentEstimates { s0, s1, s2, a_hat, n_used, dt, condition_number })
}

pub fn extract_params(moments: &MomentEstimates, model: &ReducedModel) -> Result<DynParams> {
    let g = model.n_gen();
    if moments.a_hat.nrows() != 2 * g {
        return Err(Error::InvalidParameter(format!(
            "moments describe {} generators, model has {g}",
            moments.a_hat.nrows() / 2
        )));
    }
    let coupling = moments.a_hat.view((g, 0), (g, g));
    let friction = moments.a_hat.view((g, g), (g, g));

    let mut inertia = Vec::with_capacity(g);
    let mut damping = Vec::with_capacity(g);
    for i in 0..g {
        let bus = model.gen_ids[i];
        let lr_row = model.l_reduced.row(i);
        let norm = lr_row.dot(&lr_row);
        if norm == 0.0 {
            return Err(Error::IdentificationFailed {
                bus,
                what: "generator is not coupled to the network".into(),
            });
        }
        let inv_m = -coupling.row(i).dot(&lr_row) / norm;
        let m = inv_m.recip();
        let d = -m * friction[(i, i)];
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::IdentificationFailed { bus, what: format!("inertia estimate {m}") });
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::IdentificationFailed { bus, what: format!("damping estimate {d}") });
        }
        inertia.push(m);
        damping.push(d);
    }

    // Residual r = Δ - ÂX has second moment S₂ - Â S₁ᵀ; its frequency block
    // should equal M⁻¹ σ² S M⁻¹ / τ.
    let residual = &moments.s2 - &moments.a_hat * moments.s1.transpose();
    let freq_block = residual.view((g, g), (g, g));
    let m_hat = DVector::from_vec(inertia.clone());
    let scaled = DMatrix::from_fn(g, g, |i, j| m_hat[i] * freq_block[(i, j)] * m_hat[j]);
    let sigma2 = scaled.trace() * moments.dt / model.sigma_shape.trace();
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::IdentificationFailed {
            bus: model.gen_ids[0],
            what: format!("noise variance estimate {sigma2}"),
        });
    }

    DynParams::new(inertia, damping, sigma2.sqrt())
}

/// `empirical_moments` followed by `extract_params`.
pub fn learn(traj: &Trajectory, model: &ReducedModel) -> Result<(DynParams, MomentEstimates)> {
    if traj.gen_ids != model.gen_ids {
        return Err(Error::Schema(format!(
            "trajectory generators {:?} do not match the case's {:?}",
            traj.gen_ids, model.gen_ids
        )));
    }
    let moments = empirical_moments(traj)?;
    let params = extract_params(&moments, model)?;
    Ok((params, moments))
}

/// The companion-form dynamics matrix `[[0, I], [-M⁻¹L^r, -M⁻¹D]]`.
pub fn dynamics_matrix(model: &ReducedModel, params: &DynParams) -> DMatrix<f64> {
    let g = model.n_gen();
    let mut a = DMatrix::zeros(2 * g, 2 * g);
    a.view_mut((0, g), (g, g)).fill_with_identity();
    for i in 0..g {
        let inv_m = params.inertia[i].recip();
        for j in 0..g {
            a[(g + i, j)] = -inv_m * model.l_reduced[(i, j)];
        }
        a[(g + i, g + i)] = -inv_m * params.damping[i];
    }
    a
}
