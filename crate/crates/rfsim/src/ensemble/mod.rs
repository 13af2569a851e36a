//! Parallel ensemble generation, map-aggregate statistics and parameter
//! sweeps over a shared-nothing worker pool.
//!
//! Every realization is a pure function of (model, derived seed), so
//! stored bytes and aggregated summaries are identical for any worker
//! count. Statistics are folded in realization-index order, which makes
//! the floating-point results bit-stable as well.

use thiserror::Error;

use crate::mesh::DiffusionMatrix;
use crate::model::{CompiledModel, ModelError, ModelSpec};
use crate::rng::derive_seed;
use crate::solver::{run_nsm_with, SolverOptions};
use crate::storage::{StorageBackend, StorageError, StorageKey};
use crate::trajectory::{trajectory_from_bytes, trajectory_to_bytes, Trajectory};

mod pool;
mod postproc;
mod sweep;

pub use pool::run_tasks;
pub use postproc::{FnProcessor, PostContext, PostProcessor, Registry};
pub use sweep::{run_parameter_sweep, run_sweep_with_factory, SweepPoint, SweepSpec, SweepTable};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("this operation requires storage mode shared or persistent")]
    StorageModeRequired,
    #[error("variance is undefined for {0} realization(s); need at least 2")]
    VarianceUndefined(u64),
    #[error("post-processor {name} returned {got} component(s), declared {want}")]
    ArityMismatch {
        name: String,
        got: usize,
        want: usize,
    },
    #[error("post-processor {name}: {msg}")]
    PostProcessor { name: String, msg: String },
    #[error("realization {index} (seed {seed}) failed after retry: {detail}")]
    Task {
        index: usize,
        seed: u64,
        detail: String,
    },
    #[error("model hash does not match the ensemble handle")]
    ModelMismatch,
    #[error("sweep axis {0:?} is not a model parameter")]
    UnknownParameter(String),
    #[error("sweep needs at least one parameter axis")]
    EmptySweep,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Where an ensemble's realizations live.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageMode {
    NoStorage,
    Shared,
    Persistent,
}

impl std::fmt::Display for StorageMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StorageMode::NoStorage => "none",
            StorageMode::Shared => "shared",
            StorageMode::Persistent => "persistent",
        })
    }
}

impl std::str::FromStr for StorageMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" | "no-storage" => Ok(StorageMode::NoStorage),
            "shared" => Ok(StorageMode::Shared),
            "persistent" => Ok(StorageMode::Persistent),
            other => Err(format!("unknown storage mode {other:?}")),
        }
    }
}

/// Named collection of realizations of one model.
#[derive(Clone, Debug)]
pub struct EnsembleHandle {
    pub id: String,
    pub model_hash: [u8; 32],
    pub base_seed: u64,
    pub count: usize,
    pub storage_mode: StorageMode,
}

impl EnsembleHandle {
    pub fn new(id: &str, model: &ModelSpec, base_seed: u64, mode: StorageMode) -> Self {
        EnsembleHandle {
            id: id.to_string(),
            model_hash: model.content_hash(),
            base_seed,
            count: 0,
            storage_mode: mode,
        }
    }

    /// Key of realization `index`: `<id>/r<index>`.
    pub fn key(&self, index: usize) -> StorageKey {
        StorageKey::new(&self.id, &format!("r{index}"))
            .expect("ensemble ids are validated at construction")
    }

    /// Dense key list `<id>/r0 .. <id>/r<count-1>`.
    pub fn keys(&self) -> Vec<StorageKey> {
        (0..self.count).map(|i| self.key(i)).collect()
    }

    pub fn seed_of(&self, index: usize) -> u64 {
        derive_seed(self.base_seed, index as u64)
    }

    /// Storage key of the handle's own metadata document.
    pub fn metadata_key(&self) -> StorageKey {
        StorageKey::new(&self.id, "handle.json").expect("validated id")
    }

    /// JSON document describing this handle, for persistence next to the
    /// realizations.
    pub fn to_json(&self) -> serde_json::Value {
        let hash_hex: String = self
            .model_hash
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        serde_json::json!({
            "id": self.id,
            "model_hash": hash_hex,
            "base_seed": self.base_seed,
            "count": self.count,
            "storage_mode": self.storage_mode.to_string(),
        })
    }

    pub fn from_json(doc: &serde_json::Value) -> Result<Self, String> {
        let id = doc["id"].as_str().ok_or("handle: missing id")?.to_string();
        let hash_hex = doc["model_hash"].as_str().ok_or("handle: missing model_hash")?;
        if hash_hex.len() != 64 {
            return Err("handle: model_hash must be 64 hex chars".into());
        }
        let mut model_hash = [0u8; 32];
        for (i, byte) in model_hash.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&hash_hex[2 * i..2 * i + 2], 16)
                .map_err(|_| "handle: bad model_hash hex")?;
        }
        let base_seed = doc["base_seed"].as_u64().ok_or("handle: missing base_seed")?;
        let count = doc["count"].as_u64().ok_or("handle: missing count")? as usize;
        let storage_mode: StorageMode = doc["storage_mode"]
            .as_str()
            .ok_or("handle: missing storage_mode")?
            .parse()?;
        Ok(EnsembleHandle {
            id,
            model_hash,
            base_seed,
            count,
            storage_mode,
        })
    }
}

/// Generate `n` new realizations and store them under the handle's keys.
pub fn add_realizations(
    handle: &mut EnsembleHandle,
    model: &ModelSpec,
    n: usize,
    workers: usize,
    backend: &dyn StorageBackend,
) -> Result<(), EngineError> {
    add_realizations_with(handle, model, n, workers, backend, &SolverOptions::default())
}

pub fn add_realizations_with(
    handle: &mut EnsembleHandle,
    model: &ModelSpec,
    n: usize,
    workers: usize,
    backend: &dyn StorageBackend,
    opts: &SolverOptions,
) -> Result<(), EngineError> {
    if handle.storage_mode == StorageMode::NoStorage {
        return Err(EngineError::StorageModeRequired);
    }
    let compiled = model.compile()?;
    if compiled.content_hash != handle.model_hash {
        return Err(EngineError::ModelMismatch);
    }
    let diffusion = model.assemble_diffusion().map_err(ModelError::from)?;
    let start = handle.count;
    run_tasks(workers, n, |i| {
        let index = start + i;
        let seed = handle.seed_of(index);
        let traj = run_nsm_with(&compiled, &diffusion, seed, opts)
            .map_err(|e| format!("solver: {e}"))?;
        let bytes = trajectory_to_bytes(&traj).map_err(|e| format!("serialize: {e}"))?;
        let key = handle.key(index);
        backend
            .put(&key, &bytes)
            .map_err(|e| format!("store {key}: {e}"))?;
        Ok::<_, String>(())
    })
    .map_err(|f| EngineError::Task {
        index: start + f.index,
        seed: handle.seed_of(start + f.index),
        detail: f.error,
    })?;
    handle.count += n;
    Ok(())
}

/// Running (count, sum, sum of squares) partials; merging is associative
/// and commutative, and the engine folds partials in realization order so
/// summaries are bit-stable.
#[derive(Clone, Debug, Default)]
pub struct StatAccumulator {
    pub n: u64,
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
}

impl StatAccumulator {
    pub fn push(&mut self, g: &[f64]) {
        if self.n == 0 {
            self.sum = vec![0.0; g.len()];
            self.sumsq = vec![0.0; g.len()];
        }
        debug_assert_eq!(self.sum.len(), g.len());
        self.n += 1;
        for (i, &v) in g.iter().enumerate() {
            self.sum[i] += v;
            self.sumsq[i] += v * v;
        }
    }

    pub fn merge(mut self, other: &StatAccumulator) -> StatAccumulator {
        if self.n == 0 {
            return other.clone();
        }
        if other.n > 0 {
            self.n += other.n;
            for (a, b) in self.sum.iter_mut().zip(&other.sum) {
                *a += b;
            }
            for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
                *a += b;
            }
        }
        self
    }

    pub fn summary(&self) -> Result<StatSummary, EngineError> {
        if self.n < 2 {
            return Err(EngineError::VarianceUndefined(self.n));
        }
        let n = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|&s| s / n).collect();
        let variance: Vec<f64> = self
            .sumsq
            .iter()
            .zip(&mean)
            .map(|(&sq, &m)| ((sq - n * m * m) / (n - 1.0)).max(0.0))
            .collect();
        let ci95_halfwidth = variance.iter().map(|&v| 1.96 * (v / n).sqrt()).collect();
        Ok(StatSummary {
            mean,
            variance,
            ci95_halfwidth,
            n: self.n,
        })
    }
}

/// Componentwise sample mean, unbiased variance and 95% CI half-widths
/// over an ensemble of post-processed realizations.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct StatSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub ci95_halfwidth: Vec<f64>,
    /// Number of realizations (the spec's K).
    #[serde(rename = "K")]
    pub n: u64,
}

impl StatSummary {
    /// CSV rows, one per component:
    /// `stat_name,component,mean,variance,ci95_halfwidth,K`.
    pub fn to_csv(&self, stat_name: &str) -> String {
        use std::fmt::Write;
        let mut out = String::from("stat_name,component,mean,variance,ci95_halfwidth,K\n");
        for c in 0..self.mean.len() {
            writeln!(
                out,
                "{stat_name},{c},{},{},{},{}",
                self.mean[c], self.variance[c], self.ci95_halfwidth[c], self.n
            )
            .unwrap();
        }
        out
    }
}

/// Apply `g` to every stored realization and aggregate (workflow D).
pub fn map_aggregate(
    handle: &EnsembleHandle,
    model: &ModelSpec,
    g: &dyn PostProcessor,
    workers: usize,
    backend: &dyn StorageBackend,
) -> Result<StatSummary, EngineError> {
    if handle.count < 2 {
        return Err(EngineError::VarianceUndefined(handle.count as u64));
    }
    let ctx = PostContext { model };
    let want = g.arity(&ctx);
    let vectors = run_tasks(workers, handle.count, |index| {
        let key = handle.key(index);
        let bytes = backend
            .get(&key)
            .map_err(|e| format!("fetch {key}: {e}"))?;
        let traj = trajectory_from_bytes(&bytes).map_err(|e| format!("decode {key}: {e}"))?;
        if traj.model_hash != handle.model_hash {
            return Err(format!("{key}: stored trajectory is from a different model"));
        }
        apply_checked(g, &traj, &ctx, want).map_err(|e| e.to_string())
    })
    .map_err(|f| EngineError::Task {
        index: f.index,
        seed: handle.seed_of(f.index),
        detail: f.error,
    })?;
    fold_in_order(vectors).summary()
}

/// Fused generate-and-postprocess without persisting anything
/// (workflow B). Statistics equal the store-then-process path exactly
/// for the same base seed.
pub fn run_ensemble_nostorage(
    model: &ModelSpec,
    n: usize,
    g: &dyn PostProcessor,
    workers: usize,
    base_seed: u64,
) -> Result<StatSummary, EngineError> {
    run_ensemble_nostorage_with(model, n, g, workers, base_seed, &SolverOptions::default())
}

pub fn run_ensemble_nostorage_with(
    model: &ModelSpec,
    n: usize,
    g: &dyn PostProcessor,
    workers: usize,
    base_seed: u64,
    opts: &SolverOptions,
) -> Result<StatSummary, EngineError> {
    if n < 2 {
        return Err(EngineError::VarianceUndefined(n as u64));
    }
    let compiled = model.compile()?;
    let diffusion = model.assemble_diffusion().map_err(ModelError::from)?;
    let ctx = PostContext { model };
    let want = g.arity(&ctx);
    let vectors = run_tasks(workers, n, |index| {
        let seed = derive_seed(base_seed, index as u64);
        let traj = run_nsm_with(&compiled, &diffusion, seed, opts)
            .map_err(|e| format!("solver: {e}"))?;
        apply_checked(g, &traj, &ctx, want).map_err(|e| e.to_string())
    })
    .map_err(|f| EngineError::Task {
        index: f.index,
        seed: derive_seed(base_seed, f.index as u64),
        detail: f.error,
    })?;
    fold_in_order(vectors).summary()
}

fn apply_checked(
    g: &dyn PostProcessor,
    traj: &Trajectory,
    ctx: &PostContext<'_>,
    want: usize,
) -> Result<Vec<f64>, EngineError> {
    let out = g.apply(traj, ctx).map_err(|msg| EngineError::PostProcessor {
        name: g.name().to_string(),
        msg,
    })?;
    if out.len() != want {
        return Err(EngineError::ArityMismatch {
            name: g.name().to_string(),
            got: out.len(),
            want,
        });
    }
    Ok(out)
}

/// Canonical reduction: fold per-realization vectors in index order.
fn fold_in_order(vectors: Vec<Vec<f64>>) -> StatAccumulator {
    let mut acc = StatAccumulator::default();
    for v in &vectors {
        acc.push(v);
    }
    acc
}

/// Convenience for tests and callers that already hold the compiled
/// model: one realization by ensemble index.
pub fn run_realization(
    compiled: &CompiledModel<'_>,
    diffusion: &DiffusionMatrix,
    base_seed: u64,
    index: usize,
) -> Result<Trajectory, crate::solver::SolverError> {
    crate::solver::run_nsm(compiled, diffusion, derive_seed(base_seed, index as u64))
}

#[cfg(test)]
mod tests;
