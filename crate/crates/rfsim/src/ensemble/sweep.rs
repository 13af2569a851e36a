//! Parameter sweeps: a collection of ensembles, one per cartesian point.
//!
//! Points are enumerated canonically (last axis fastest) and each gets an
//! independent base seed derived from the sweep seed and the point index,
//! so results do not depend on execution order or worker count. A failing
//! point is recorded and the sweep continues.

use std::sync::Arc;

use serde_json::json;

use crate::model::ModelSpec;
use crate::rng::derive_seed;
use crate::storage::StorageBackend;

use super::{
    add_realizations, map_aggregate, run_ensemble_nostorage, EngineError, EnsembleHandle,
    PostProcessor, Registry, StatSummary, StorageMode,
};

#[derive(Clone, Debug)]
pub struct SweepSpec {
    /// Parameter name -> values; the cartesian product is swept.
    pub axes: Vec<(String, Vec<f64>)>,
    /// Realizations per parameter point.
    pub ensemble_size: usize,
    /// Post-processor spec string, resolved through the registry.
    pub post: String,
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub index: usize,
    /// (parameter, value) pairs in axis order.
    pub values: Vec<(String, f64)>,
    pub outcome: Result<StatSummary, String>,
}

#[derive(Debug)]
pub struct SweepTable {
    pub sweep_id: String,
    pub post_name: String,
    pub ensemble_size: usize,
    pub axis_names: Vec<String>,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    pub fn failed_points(&self) -> usize {
        self.points.iter().filter(|p| p.outcome.is_err()).count()
    }

    /// CSV with one row per (point, component):
    /// `<param columns>,stat_name,component,mean,variance,ci95_halfwidth,K`.
    /// Failed points are omitted here and flagged in the JSON document.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for name in &self.axis_names {
            write!(out, "{name},").unwrap();
        }
        out.push_str("stat_name,component,mean,variance,ci95_halfwidth,K\n");
        for p in &self.points {
            let Ok(summary) = &p.outcome else { continue };
            for c in 0..summary.mean.len() {
                for (_, v) in &p.values {
                    write!(out, "{v},").unwrap();
                }
                writeln!(
                    out,
                    "{},{c},{},{},{},{}",
                    self.post_name,
                    summary.mean[c],
                    summary.variance[c],
                    summary.ci95_halfwidth[c],
                    summary.n
                )
                .unwrap();
            }
        }
        out
    }

    /// JSON document mirroring the per-point summaries, including failed
    /// points with their error text.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "sweep_id": self.sweep_id,
            "post": self.post_name,
            "ensemble_size": self.ensemble_size,
            "axes": self.axis_names,
            "points": self.points.iter().map(|p| {
                let params: serde_json::Map<String, serde_json::Value> = p
                    .values
                    .iter()
                    .map(|(k, v)| (k.clone(), json!(v)))
                    .collect();
                match &p.outcome {
                    Ok(s) => json!({"index": p.index, "params": params, "summary": s}),
                    Err(e) => json!({"index": p.index, "params": params, "error": e}),
                }
            }).collect::<Vec<_>>(),
        })
    }
}

/// Cartesian tuples in canonical order (last axis fastest).
fn enumerate_points(axes: &[(String, Vec<f64>)]) -> Vec<Vec<(String, f64)>> {
    let mut points: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (name, values) in axes {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for prefix in &points {
            for &v in values {
                let mut p = prefix.clone();
                p.push((name.clone(), v));
                next.push(p);
            }
        }
        points = next;
    }
    points
}

/// Sweep over model parameters. Each point clones the model, overrides
/// the swept parameters, and runs one ensemble.
pub fn run_parameter_sweep(
    model: &ModelSpec,
    sweep: &SweepSpec,
    workers: usize,
    storage_mode: StorageMode,
    backend: Option<&dyn StorageBackend>,
    base_seed: u64,
    sweep_id: &str,
    registry: &Registry,
) -> Result<SweepTable, EngineError> {
    if sweep.axes.is_empty() {
        return Err(EngineError::EmptySweep);
    }
    for (name, _) in &sweep.axes {
        if model.parameter_index(name).is_none() {
            return Err(EngineError::UnknownParameter(name.clone()));
        }
    }
    run_sweep_with_factory(
        model.clone(),
        &sweep.axes,
        sweep.ensemble_size,
        &sweep.post,
        workers,
        storage_mode,
        backend,
        base_seed,
        sweep_id,
        registry,
        |base, values| {
            let mut m = base.clone();
            for (name, v) in values {
                m.set_parameter(name, *v).expect("axis validated above");
            }
            Ok(m)
        },
    )
}

/// Sweep core shared with case studies that construct a fresh model per
/// point instead of overriding parameters.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep_with_factory<M>(
    base_model: ModelSpec,
    axes: &[(String, Vec<f64>)],
    ensemble_size: usize,
    post_spec: &str,
    workers: usize,
    storage_mode: StorageMode,
    backend: Option<&dyn StorageBackend>,
    base_seed: u64,
    sweep_id: &str,
    registry: &Registry,
    make_model: M,
) -> Result<SweepTable, EngineError>
where
    M: Fn(&ModelSpec, &[(String, f64)]) -> Result<ModelSpec, EngineError>,
{
    let points = enumerate_points(axes);
    let mut rows = Vec::with_capacity(points.len());
    let mut post_name = post_spec.to_string();
    for (index, values) in points.into_iter().enumerate() {
        let point_seed = derive_seed(base_seed, index as u64);
        let outcome = run_point(
            &base_model,
            &values,
            ensemble_size,
            post_spec,
            workers,
            storage_mode,
            backend,
            point_seed,
            sweep_id,
            index,
            registry,
            &make_model,
        );
        if let Ok((name, _)) = &outcome {
            post_name = name.clone();
        }
        rows.push(SweepPoint {
            index,
            values,
            outcome: outcome.map(|(_, s)| s),
        });
    }
    Ok(SweepTable {
        sweep_id: sweep_id.to_string(),
        post_name,
        ensemble_size,
        axis_names: axes.iter().map(|(n, _)| n.clone()).collect(),
        points: rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_point<M>(
    base_model: &ModelSpec,
    values: &[(String, f64)],
    ensemble_size: usize,
    post_spec: &str,
    workers: usize,
    storage_mode: StorageMode,
    backend: Option<&dyn StorageBackend>,
    point_seed: u64,
    sweep_id: &str,
    index: usize,
    registry: &Registry,
    make_model: &M,
) -> Result<(String, StatSummary), String>
where
    M: Fn(&ModelSpec, &[(String, f64)]) -> Result<ModelSpec, EngineError>,
{
    let model = make_model(base_model, values).map_err(|e| e.to_string())?;
    let g: Arc<dyn PostProcessor> = registry.resolve(post_spec, &model)?;
    let summary = match storage_mode {
        StorageMode::NoStorage => {
            run_ensemble_nostorage(&model, ensemble_size, g.as_ref(), workers, point_seed)
                .map_err(|e| e.to_string())?
        }
        mode => {
            let backend = backend.ok_or("storage mode needs a backend")?;
            let mut handle = EnsembleHandle::new(
                &format!("{sweep_id}/p{index}"),
                &model,
                point_seed,
                mode,
            );
            add_realizations(&mut handle, &model, ensemble_size, workers, backend)
                .map_err(|e| e.to_string())?;
            map_aggregate(&handle, &model, g.as_ref(), workers, backend)
                .map_err(|e| e.to_string())?
        }
    };
    Ok((g.name().to_string(), summary))
}
