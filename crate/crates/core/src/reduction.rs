//! Kron reduction of the grid onto its generator buses.
//!
//! Load buses have no inertia, so their angles follow the generators
//! instantaneously. Eliminating them yields an equivalent generator-only
//! network `L^r = L^gg - L^gl (L^ll)^-1 L^lg`, a correlated effective noise,
//! and a per-bus forcing gain `Γ_l` describing how a disturbance injected at
//! any bus is seen by the generators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusId, LaplacianBlocks};
use crate::simulator::DynParams;

pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    pub l_reduced: DMatrix<f64>,
    /// Effective noise covariance with the noise scale factored out:
    /// `I + L^gl (L^ll)^-2 L^lg`.
    pub sigma_shape: DMatrix<f64>,
    /// Column `j` is `Γ` for the `j`-th bus in canonical order.
    pub gamma: DMatrix<f64>,
    pub p_reduced: DVector<f64>,
    pub gen_ids: Vec<BusId>,
    pub load_ids: Vec<BusId>,
}

impl ReducedModel {
    pub fn n_gen(&self) -> usize {
        self.gen_ids.len()
    }

    /// All bus ids, generators first.
    pub fn bus_ids(&self) -> Vec<BusId> {
        self.gen_ids.iter().chain(&self.load_ids).copied().collect()
    }

    pub fn column_of(&self, id: BusId) -> Result<usize> {
        if let Some(i) = self.gen_ids.iter().position(|&g| g == id) {
            return Ok(i);
        }
        self.load_ids
            .iter()
            .position(|&l| l == id)
            .map(|i| self.n_gen() + i)
            .ok_or(Error::UnknownBus(id))
    }

    pub fn is_generator(&self, id: BusId) -> bool {
        self.gen_ids.contains(&id)
    }

    /// Sign of the physical forcing relative to `Γ_l`: the force seen at the
    /// generators is `+γΓ_l cos(..)` for a generator source and `-γΓ_l cos(..)`
    /// for a load source.
    pub fn source_sign(&self, id: BusId) -> Result<f64> {
        let col = self.column_of(id)?;
        Ok(if col < self.n_gen() { 1.0 } else { -1.0 })
    }

    /// `-L^gl (L^ll)^-1`, the map from load injections to effective generator
    /// injections. Shape `|G| x |L|`.
    pub fn load_transfer(&self) -> DMatrix<f64> {
        let g = self.n_gen();
        -self.gamma.columns(g, self.load_ids.len()).into_owned()
    }
}

fn spd_factor(ll: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(ll.clone()).ok_or(Error::LoadIsland)
}

pub fn kron_reduce(blocks: &LaplacianBlocks) -> Result<ReducedModel> {
    let g = blocks.n_gen();
    let l = blocks.n_load();
    let p_load = blocks.injections.rows(g, l).into_owned();

    let (l_reduced, sigma_shape, load_gamma, p_reduced) = if l == 0 {
        (
            blocks.gg.clone(),
            DMatrix::identity(g, g),
            DMatrix::zeros(g, 0),
            DVector::zeros(g),
        )
    } else {
        let chol = spd_factor(&blocks.ll)?;
        // (L^ll)^-1 L^lg, i.e. the transpose of L^gl (L^ll)^-1.
        let solved = chol.solve(&blocks.lg);
        let l_reduced = &blocks.gg - &blocks.gl * &solved;
        let sigma_shape = DMatrix::identity(g, g) + solved.transpose() * &solved;
        let p_reduced = -(solved.transpose() * p_load);
        (symmetrize(l_reduced), symmetrize(sigma_shape), solved.transpose(), p_reduced)
    };

    let mut gamma = DMatrix::zeros(g, g + l);
    gamma.view_mut((0, 0), (g, g)).fill_with_identity();
    gamma.view_mut((0, g), (g, l)).copy_from(&load_gamma);

    Ok(ReducedModel {
        l_reduced,
        sigma_shape,
        gamma,
        p_reduced,
        gen_ids: blocks.gen_ids.clone(),
        load_ids: blocks.load_ids.clone(),
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `σ² (I + L^gl (L^ll)^-2 L^lg)`.
pub fn noise_covariance(model: &ReducedModel, sigma: f64) -> Result<DMatrix<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise scale must be positive, got {sigma}"
        )));
    }
    Ok(&model.sigma_shape * (sigma * sigma))
}

pub fn forcing_gain(model: &ReducedModel, source: BusId) -> Result<DVector<f64>> {
    let col = model.column_of(source)?;
    Ok(model.gamma.column(col).into_owned())
}

/// Partitions all buses into classes whose forcing gains coincide up to sign.
///
/// Groups are sorted internally and ordered by their smallest id.
pub fn degeneracy_groups(model: &ReducedModel, tol: f64) -> Vec<Vec<BusId>> {
    let ids = model.bus_ids();
    let n = ids.len();
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for a in 0..n {
        for b in (a + 1)..n {
            let ga = model.gamma.column(a);
            let gb = model.gamma.column(b);
            let same = (ga - gb).amax() <= tol;
            let flipped = (ga + gb).amax() <= tol;
            if same || flipped {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }

    let mut classes: std::collections::BTreeMap<usize, Vec<BusId>> = Default::default();
    for (i, &id) in ids.iter().enumerate().take(n) {
        let root = find(&mut parent, i);
        classes.entry(root).or_default().push(id);
    }
    let mut groups: Vec<Vec<BusId>> = classes
        .into_values()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Undamped natural frequencies in Hz from the nonzero eigenvalues of
/// `M^-1 L^r`, ascending. Diagnostic only.
pub fn natural_modes(model: &ReducedModel, params: &DynParams) -> Vec<f64> {
    let g = model.n_gen();
    if g == 0 {
        return Vec::new();
    }
    // M^-1/2 L^r M^-1/2 is similar to M^-1 L^r and symmetric.
    let scale = DVector::from_iterator(g, params.inertia.iter().map(|m| m.sqrt().recip()));
    let sym = DMatrix::from_fn(g, g, |i, j| scale[i] * model.l_reduced[(i, j)] * scale[j]);
    let eig = SymmetricEigen::new(sym);
    let largest = eig.eigenvalues.amax();
    if largest == 0.0 {
        return Vec::new();
    }
    let mut modes: Vec<f64> = eig
        .eigenvalues
        .iter()
        .filter(|&&v| v > 1e-9 * largest)
        .map(|v| v.sqrt() / (2.0 * std::f64::consts::PI))
        .collect();
    modes.sort_by(f64::total_cmp);
    modes
}
