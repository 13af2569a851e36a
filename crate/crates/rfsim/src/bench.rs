//! Strong/weak scaling benchmark harness.
//!
//! Strong scaling runs a fixed job count at increasing worker counts;
//! weak scaling grows the job count proportionally so per-worker work
//! stays constant. Each cell times the public ensemble API end to end
//! (scheduling, simulation, storage when enabled, aggregation) and
//! nothing else, so the numbers reflect user-visible performance. Wall
//! times are the only nondeterministic report fields.
//!
//! The default workload is the yeast polarization preset at fixed N on a
//! coarse mesh, chosen so one job is a few tens of milliseconds.

use std::time::Instant;

use serde_json::json;

use crate::ensemble::{
    add_realizations, map_aggregate, run_ensemble_nostorage, EngineError, EnsembleHandle,
    PostProcessor, Registry, StorageMode,
};
use crate::model::ModelSpec;
use crate::storage::StorageBackend;

pub const BENCH_SCHEMA: &str = "rfsim-bench-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchMode {
    Strong,
    Weak,
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchMode::Strong => "strong",
            BenchMode::Weak => "weak",
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub workers: usize,
    pub jobs: usize,
    pub wall_seconds: f64,
    /// wall(first row) / wall(this row); the first row defines 1.0.
    pub speedup: f64,
    /// Strong: speedup / (workers / workers_0). Weak: wall_0 / wall.
    pub efficiency: f64,
}

#[derive(Debug)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub storage_mode: StorageMode,
    pub logical_cpus: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Largest observed speedup; saturation shows as this flattening
    /// below the worker count.
    pub fn max_speedup(&self) -> f64 {
        self.rows.iter().map(|r| r.speedup).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let mut out =
            String::from("mode,storage,workers,jobs,wall_seconds,speedup,efficiency\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.mode, self.storage_mode, r.workers, r.jobs, r.wall_seconds, r.speedup,
                r.efficiency
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "schema": BENCH_SCHEMA,
            "mode": self.mode.to_string(),
            "storage": self.storage_mode.to_string(),
            "logical_cpus": self.logical_cpus,
            "max_speedup": self.max_speedup(),
            "rows": self.rows.iter().map(|r| json!({
                "workers": r.workers,
                "jobs": r.jobs,
                "wall_seconds": r.wall_seconds,
                "speedup": r.speedup,
                "efficiency": r.efficiency,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Time one full ensemble workflow (generate + aggregate) through the
/// public API.
fn run_cell(
    model: &ModelSpec,
    jobs: usize,
    workers: usize,
    storage_mode: StorageMode,
    backend: Option<&dyn StorageBackend>,
    g: &dyn PostProcessor,
    base_seed: u64,
    cell_id: &str,
) -> Result<f64, EngineError> {
    let started = Instant::now();
    match storage_mode {
        StorageMode::NoStorage => {
            run_ensemble_nostorage(model, jobs, g, workers, base_seed)?;
        }
        mode => {
            let backend = backend.ok_or(EngineError::StorageModeRequired)?;
            let mut handle = EnsembleHandle::new(cell_id, model, base_seed, mode);
            add_realizations(&mut handle, model, jobs, workers, backend)?;
            map_aggregate(&handle, model, g, workers, backend)?;
        }
    }
    Ok(started.elapsed().as_secs_f64())
}

fn check_cpus(worker_counts: &[usize]) -> usize {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    if let Some(&max) = worker_counts.iter().max() {
        if cpus < max {
            eprintln!(
                "warning: benchmarking {max} workers on {cpus} logical CPU(s); \
                 scaling numbers will reflect the hardware, not the engine"
            );
        }
    }
    cpus
}

/// Fixed total work, growing worker counts.
pub fn bench_strong(
    model: &ModelSpec,
    n_jobs: usize,
    worker_counts: &[usize],
    storage_mode: StorageMode,
    backend: Option<&dyn StorageBackend>,
    post_spec: &str,
    base_seed: u64,
) -> Result<BenchReport, EngineError> {
    let logical_cpus = check_cpus(worker_counts);
    let registry = Registry::with_builtins();
    let g = registry
        .resolve(post_spec, model)
        .map_err(|msg| EngineError::PostProcessor {
            name: post_spec.to_string(),
            msg,
        })?;
    let mut rows: Vec<BenchRow> = Vec::with_capacity(worker_counts.len());
    for (i, &workers) in worker_counts.iter().enumerate() {
        let wall = run_cell(
            model,
            n_jobs,
            workers,
            storage_mode,
            backend,
            g.as_ref(),
            base_seed,
            &format!("bench/strong-{storage_mode}-w{workers}"),
        )?;
        let (speedup, efficiency) = if i == 0 {
            (1.0, 1.0)
        } else {
            let s = rows[0].wall_seconds / wall;
            (s, s / (workers as f64 / rows[0].workers as f64))
        };
        rows.push(BenchRow {
            workers,
            jobs: n_jobs,
            wall_seconds: wall,
            speedup,
            efficiency,
        });
    }
    Ok(BenchReport {
        mode: BenchMode::Strong,
        storage_mode,
        logical_cpus,
        rows,
    })
}

/// Per-worker work held constant; ideal outcome is flat wall time.
pub fn bench_weak(
    model: &ModelSpec,
    jobs_per_worker: usize,
    worker_counts: &[usize],
    storage_mode: StorageMode,
    backend: Option<&dyn StorageBackend>,
    post_spec: &str,
    base_seed: u64,
) -> Result<BenchReport, EngineError> {
    let logical_cpus = check_cpus(worker_counts);
    let registry = Registry::with_builtins();
    let g = registry
        .resolve(post_spec, model)
        .map_err(|msg| EngineError::PostProcessor {
            name: post_spec.to_string(),
            msg,
        })?;
    let mut rows: Vec<BenchRow> = Vec::with_capacity(worker_counts.len());
    for (i, &workers) in worker_counts.iter().enumerate() {
        let jobs = jobs_per_worker * workers;
        let wall = run_cell(
            model,
            jobs,
            workers,
            storage_mode,
            backend,
            g.as_ref(),
            base_seed,
            &format!("bench/weak-{storage_mode}-w{workers}"),
        )?;
        let (speedup, efficiency) = if i == 0 {
            (1.0, 1.0)
        } else {
            (rows[0].wall_seconds / wall, rows[0].wall_seconds / wall)
        };
        rows.push(BenchRow {
            workers,
            jobs,
            wall_seconds: wall,
            speedup,
            efficiency,
        });
    }
    Ok(BenchReport {
        mode: BenchMode::Weak,
        storage_mode,
        logical_cpus,
        rows,
    })
}

/// The pinned benchmark workload: the yeast preset at fixed N = 600 on a
/// coarse mesh with a short horizon, summarized by final counts.
pub fn bench_workload_model() -> ModelSpec {
    let params = crate::polarization::YeastParams {
        mesh_subdiv: 1,
        t_end: 2.0,
        n_out: 9,
        ..Default::default()
    };
    crate::polarization::build_yeast_model(600, &params)
        .expect("the pinned bench workload always builds")
}

pub const BENCH_POST_SPEC: &str = "final-state";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::LocalStorage;

    #[test]
    fn strong_report_structure() {
        let model = bench_workload_model();
        let report = bench_strong(
            &model,
            4,
            &[1, 2],
            StorageMode::NoStorage,
            None,
            BENCH_POST_SPEC,
            5,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].speedup, 1.0);
        assert_eq!(report.rows[0].jobs, 4);
        assert_eq!(report.rows[1].jobs, 4);
        assert!(report.rows.iter().all(|r| r.wall_seconds > 0.0));
        let csv = report.to_csv();
        assert!(csv.starts_with("mode,storage,workers,jobs,wall_seconds,speedup,efficiency"));
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(report.to_json()["schema"], BENCH_SCHEMA);
    }

    #[test]
    fn weak_report_scales_jobs() {
        let model = bench_workload_model();
        let store = LocalStorage::ephemeral().unwrap();
        let report = bench_weak(
            &model,
            2,
            &[1, 2],
            StorageMode::Shared,
            Some(&store),
            BENCH_POST_SPEC,
            5,
        )
        .unwrap();
        assert_eq!(report.rows[0].jobs, 2);
        assert_eq!(report.rows[1].jobs, 4);
        assert_eq!(report.rows[0].efficiency, 1.0);
    }
}
