//! Localization of forced oscillations in power grids from measurements at
//! the generator buses only.
//!
//! The pipeline is:
//! 1. [`grid`]: load a case and build its Laplacian;
//! 2. [`reduction`]: Kron-reduce onto the generators;
//! 3. [`identification`]: learn inertia and damping from ambient data;
//! 4. [`localization`]: scan the forced-oscillation likelihood over every
//!    (source bus, frequency bin) pair.
//!
//! [`simulator`] produces synthetic measurements for all of the above and
//! [`pipeline`] strings the steps together.

pub mod error;
pub mod grid;
pub mod identification;
pub mod localization;
pub mod pipeline;
pub mod reduction;
pub mod simulator;
pub mod trajectory;

pub use error::{Error, Result};
pub use grid::{build_laplacian, load_case, Bus, BusId, BusKind, GridCase, LaplacianBlocks, Line};
pub use identification::{empirical_moments, extract_params, learn, MomentEstimates};
pub use localization::{likelihood_at, scan, spectral_stats, Fit, Hypothesis, Localizer, ScanEntry, ScanResult, SpectralCache};
pub use reduction::{degeneracy_groups, forcing_gain, kron_reduce, natural_modes, noise_covariance, ReducedModel};
pub use simulator::{simulate_full_dae, simulate_reduced, DynParams, ForcingSpec, NoiseStream, SimConfig};
pub use trajectory::{read_trajectory, write_trajectory, Trajectory, TrajectoryMeta};
