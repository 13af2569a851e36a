//! Spatial stochastic reaction-diffusion simulation with parallel
//! ensemble workflows.
//!
//! The crate samples exact realizations of reaction-diffusion jump
//! processes on voxel meshes with the Next Subvolume Method, orchestrates
//! ensembles and parameter sweeps over a worker pool, aggregates
//! map-reduce statistics, and persists results through three
//! API-compatible storage tiers (local ephemeral, shared directory,
//! S3-compatible object store).
//!
//! Start with the `examples/` directory: each major capability has a
//! runnable example, from mesh building to the yeast polarization case
//! study and the scaling benchmark harness.

pub mod expr;
pub mod heap;
pub mod markov;
pub mod mesh;
pub mod bench;
pub mod ensemble;
pub mod model;
pub mod polarization;
pub mod rng;
pub mod solver;
pub mod storage;
pub mod trajectory;
