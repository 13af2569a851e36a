//! Exact samplers for the reaction-diffusion jump process.
//!
//! `run_nsm` is the production solver (Next Subvolume Method, one event
//! queue entry per voxel, O(log K) per event). `run_direct_ssa` flattens
//! every reaction and diffusion channel into a single direct-method loop
//! and recomputes all propensities from scratch each event; it exists as
//! an independent oracle, not for speed. `CtmcGenerator` materializes the
//! full master-equation generator on a capped state space for tiny
//! systems, closing the verification triangle.

use thiserror::Error;

use crate::model::{CompiledModel, PropensityFault};
use crate::trajectory::Trajectory;


mod ctmc;
mod nsm;
mod ssa;

pub use ctmc::{build_ctmc_generator, CtmcGenerator, MAX_ENUMERATED_STATES};
pub use nsm::run_nsm_with;
pub use ssa::run_direct_ssa_with;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("propensity of reaction {reaction} in voxel {voxel} evaluated to {value} at t={time}")]
    Propensity {
        reaction: usize,
        voxel: usize,
        value: f64,
        time: f64,
    },
    #[error("reaction {reaction} fired in voxel {voxel} at t={time} without enough reactant molecules")]
    NegativeCount {
        reaction: usize,
        voxel: usize,
        time: f64,
    },
    #[error("event budget of {budget} exceeded at t={time}")]
    BudgetExceeded { budget: u64, time: f64 },
    #[error("solver input mismatch: {0}")]
    Mismatch(String),
    #[error("state space of {states} states exceeds the cap of {cap}")]
    Capacity { states: u128, cap: usize },
}

impl SolverError {
    fn from_fault(f: PropensityFault, time: f64) -> Self {
        SolverError::Propensity {
            reaction: f.reaction,
            voxel: f.voxel,
            value: f.value,
            time,
        }
    }
}

/// How the destination voxel's pending event time reacts to a propensity
/// change (the source voxel always redraws).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RescheduleMode {
    /// Rescale the remaining waiting time by old/new total propensity
    /// (standard NSM).
    #[default]
    Rescale,
    /// Redraw a fresh exponential waiting time.
    Redraw,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Safety cap on executed events per realization.
    pub max_events: u64,
    /// Recompute all propensity totals from scratch this often.
    pub resync_every: u64,
    pub reschedule: RescheduleMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_events: 1_000_000_000_000,
            resync_every: 10_000,
            reschedule: RescheduleMode::Rescale,
        }
    }
}

/// Sample one exact NSM realization with default options.
pub fn run_nsm(
    model: &CompiledModel<'_>,
    diffusion: &crate::mesh::DiffusionMatrix,
    seed: u64,
) -> Result<Trajectory, SolverError> {
    run_nsm_with(model, diffusion, seed, &SolverOptions::default())
}

/// Sample one exact realization with the direct-method oracle.
pub fn run_direct_ssa(
    model: &CompiledModel<'_>,
    diffusion: &crate::mesh::DiffusionMatrix,
    seed: u64,
) -> Result<Trajectory, SolverError> {
    run_direct_ssa_with(model, diffusion, seed, &SolverOptions::default())
}

/// Shared pre-flight checks and state setup.
pub(crate) struct SolverSetup {
    pub counts: Vec<u64>,
    pub t0: f64,
}

pub(crate) fn setup(
    model: &CompiledModel<'_>,
    diffusion: &crate::mesh::DiffusionMatrix,
    seed: u64,
) -> Result<SolverSetup, SolverError> {
    if diffusion.n_voxels() != model.n_voxels() {
        return Err(SolverError::Mismatch(format!(
            "diffusion matrix over {} voxels, model over {}",
            diffusion.n_voxels(),
            model.n_voxels()
        )));
    }
    if diffusion.n_species() != model.n_species() {
        return Err(SolverError::Mismatch(format!(
            "diffusion matrix for {} species, model has {}",
            diffusion.n_species(),
            model.n_species()
        )));
    }
    // stream 0: initial condition; stream 1: event sampling
    let mut init_rng = crate::rng::SimRng::new_stream(seed, 0);
    let counts = model.initial_state(&mut init_rng);
    Ok(SolverSetup {
        counts,
        t0: model.model.tspan[0],
    })
}

pub(crate) fn event_rng(seed: u64) -> crate::rng::SimRng {
    crate::rng::SimRng::new_stream(seed, 1)
}
