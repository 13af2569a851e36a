//! Yeast spontaneous-polarization case study.
//!
//! A minimal positive-feedback circuit on a spherical cell: cytosolic
//! Cdc42 attaches to the membrane, membrane-bound Cdc42 detaches, and
//! membrane-bound Cdc42 recruits cytosolic Cdc42. Membrane diffusion is
//! restricted to the membrane subdomain. Polarization at a time point is
//! the largest share of membrane-bound molecules found in any contiguous
//! geodesic cap covering 10% of the membrane area.
//!
//! Parameter values are this crate's own calibration (dimensionless
//! sphere of radius 1): with volume V = 4/3 pi and feedback rate `k_fb`,
//! the mean-field switch sits near N_c = k_off * V / k_fb, placed at
//! about 500 molecules by default.

use std::collections::BinaryHeap;
use std::sync::Arc;

use crate::ensemble::{
    run_sweep_with_factory, EngineError, PostContext, PostProcessor, Registry, StorageMode,
    SweepTable,
};
use crate::mesh::{build_sphere_shell_mesh, Mesh, SubdomainMap, LABEL_INTERIOR, LABEL_SURFACE};
use crate::model::{
    InitialDirective, MeshSource, ModelError, ModelSpec, Parameter, Propensity, RateConstant,
    Reaction, Species,
};
use crate::trajectory::Trajectory;

pub const CYTOSOL_SPECIES: &str = "Cdc42_c";
pub const MEMBRANE_SPECIES: &str = "Cdc42_m";

/// Calibrated model constants; see the module docs.
#[derive(Clone, Copy, Debug)]
pub struct YeastParams {
    /// Spontaneous attachment rate (1/time).
    pub k_on: f64,
    /// Detachment rate (1/time).
    pub k_off: f64,
    /// Positive-feedback recruitment rate (volume/time).
    pub k_fb: f64,
    pub d_cyt: f64,
    pub d_mem: f64,
    /// Sphere radius (length).
    pub radius: f64,
    pub mesh_subdiv: u32,
    pub t_end: f64,
    /// Number of output times, including t = 0.
    pub n_out: usize,
}

impl Default for YeastParams {
    fn default() -> Self {
        YeastParams {
            k_on: 1e-4,
            k_off: 120.0,
            k_fb: 1.0,
            d_cyt: 1.0,
            d_mem: 0.01,
            radius: 1.0,
            mesh_subdiv: 2,
            t_end: 14.0,
            n_out: 57,
        }
    }
}

impl YeastParams {
    /// Mean-field switch location N_c = k_off * V / k_fb.
    pub fn predicted_switch(&self) -> f64 {
        let volume = 4.0 / 3.0 * std::f64::consts::PI * self.radius.powi(3);
        self.k_off * volume / self.k_fb
    }
}

/// Build the polarization model: sphere-shell mesh, three reactions
/// restricted to the membrane, 10% of molecules scattered on the
/// membrane and the rest through the cytosol.
pub fn build_yeast_model(n_total: u64, params: &YeastParams) -> Result<ModelSpec, ModelError> {
    let (mesh, subs) = build_sphere_shell_mesh(params.radius, params.mesh_subdiv)?;
    let mut m = ModelSpec::new(
        MeshSource::Sphere {
            radius: params.radius,
            subdiv: params.mesh_subdiv,
        },
        mesh,
        subs,
    );
    m.species.push(Species {
        name: CYTOSOL_SPECIES.into(),
        diffusion_constant: params.d_cyt,
        allowed_subdomains: [LABEL_INTERIOR, LABEL_SURFACE].into_iter().collect(),
    });
    m.species.push(Species {
        name: MEMBRANE_SPECIES.into(),
        diffusion_constant: params.d_mem,
        allowed_subdomains: [LABEL_SURFACE].into_iter().collect(),
    });
    for (name, value) in [
        ("k_on", params.k_on),
        ("k_off", params.k_off),
        ("k_fb", params.k_fb),
    ] {
        m.parameters.push(Parameter {
            name: name.into(),
            value,
        });
    }
    let membrane_only: std::collections::BTreeSet<u32> = [LABEL_SURFACE].into_iter().collect();
    m.reactions.push(Reaction {
        name: "attach".into(),
        reactants: [(CYTOSOL_SPECIES.to_string(), 1u32)].into_iter().collect(),
        products: [(MEMBRANE_SPECIES.to_string(), 1u32)].into_iter().collect(),
        propensity: Propensity::MassAction(RateConstant::Param("k_on".into())),
        restrict_to: Some(membrane_only.clone()),
    });
    m.reactions.push(Reaction {
        name: "detach".into(),
        reactants: [(MEMBRANE_SPECIES.to_string(), 1u32)].into_iter().collect(),
        products: [(CYTOSOL_SPECIES.to_string(), 1u32)].into_iter().collect(),
        propensity: Propensity::MassAction(RateConstant::Param("k_off".into())),
        restrict_to: Some(membrane_only.clone()),
    });
    m.reactions.push(Reaction {
        name: "feedback".into(),
        reactants: [
            (CYTOSOL_SPECIES.to_string(), 1u32),
            (MEMBRANE_SPECIES.to_string(), 1u32),
        ]
        .into_iter()
        .collect(),
        products: [(MEMBRANE_SPECIES.to_string(), 2u32)].into_iter().collect(),
        propensity: Propensity::MassAction(RateConstant::Param("k_fb".into())),
        restrict_to: Some(membrane_only),
    });
    let on_membrane = n_total / 10;
    if on_membrane > 0 {
        m.initial.push(InitialDirective::Scatter {
            species: MEMBRANE_SPECIES.into(),
            count: on_membrane,
            subdomain: LABEL_SURFACE,
        });
    }
    if n_total - on_membrane > 0 {
        m.initial.push(InitialDirective::Scatter {
            species: CYTOSOL_SPECIES.into(),
            count: n_total - on_membrane,
            subdomain: LABEL_INTERIOR,
        });
    }
    m.set_tspan_linspace(0.0, params.t_end, params.n_out);
    Ok(m)
}

/// Geodesic-cap polarization metric over a fixed membrane geometry.
///
/// Caps are precomputed per candidate center: membrane voxels are ranked
/// by graph-geodesic distance from the center (ties by voxel index) and
/// accumulated until they cover at least `area_fraction` of the membrane
/// area. Membrane voxel volumes are proportional to their surface areas,
/// so they serve as the area weights.
pub struct PolarizationMetric {
    membrane: Vec<usize>,
    caps: Vec<Vec<usize>>,
    cap_area_fraction: f64,
    species: usize,
}

impl PolarizationMetric {
    pub fn new(
        mesh: &Mesh,
        subs: &SubdomainMap,
        membrane_label: u32,
        species: usize,
        area_fraction: f64,
    ) -> Result<Self, String> {
        if !subs.is_declared(membrane_label) {
            return Err(format!("no subdomain labeled {membrane_label} in this mesh"));
        }
        let membrane = subs.voxels_with(membrane_label);
        if membrane.is_empty() {
            return Err(format!("subdomain {membrane_label} has no voxels"));
        }
        let total_area: f64 = membrane.iter().map(|&v| mesh.volume(v)).sum();
        let target = area_fraction * total_area;

        // membrane-membrane adjacency with geodesic edge lengths
        let index_of: std::collections::HashMap<usize, usize> = membrane
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i))
            .collect();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); membrane.len()];
        for (mi, &v) in membrane.iter().enumerate() {
            for &(nb, edge) in mesh.neighbors(v) {
                if let Some(&mj) = index_of.get(&nb) {
                    adj[mi].push((mj, mesh.edges()[edge].distance));
                }
            }
        }

        let mut caps = Vec::with_capacity(membrane.len());
        let mut covered_area = 0.0;
        for center in 0..membrane.len() {
            let dist = dijkstra(&adj, center);
            let mut order: Vec<usize> = (0..membrane.len()).collect();
            order.sort_by(|&a, &b| {
                dist[a]
                    .partial_cmp(&dist[b])
                    .unwrap()
                    .then(membrane[a].cmp(&membrane[b]))
            });
            let mut cap = Vec::new();
            let mut area = 0.0;
            for mi in order {
                if dist[mi].is_infinite() {
                    break; // unreachable membrane voxels never join a cap
                }
                cap.push(membrane[mi]);
                area += mesh.volume(membrane[mi]);
                if area >= target {
                    break;
                }
            }
            covered_area += area / total_area;
            caps.push(cap);
        }
        let cap_area_fraction = covered_area / membrane.len() as f64;
        Ok(PolarizationMetric {
            membrane,
            caps,
            cap_area_fraction,
            species,
        })
    }

    /// Mean area fraction actually covered by the discrete caps; the
    /// uniform-occupancy limit of [`Self::percent`].
    pub fn cap_area_fraction(&self) -> f64 {
        self.cap_area_fraction
    }

    /// Maximum percentage of membrane-bound molecules contained in any
    /// cap at one output time. An empty membrane scores 0.
    pub fn percent(&self, traj: &Trajectory, t_index: usize) -> f64 {
        let total: u64 = self
            .membrane
            .iter()
            .map(|&v| traj.count(t_index, v, self.species))
            .sum();
        if total == 0 {
            return 0.0;
        }
        let mut best = 0u64;
        for cap in &self.caps {
            let in_cap: u64 = cap
                .iter()
                .map(|&v| traj.count(t_index, v, self.species))
                .sum();
            best = best.max(in_cap);
        }
        100.0 * best as f64 / total as f64
    }

    pub fn membrane_count(&self, traj: &Trajectory, t_index: usize) -> u64 {
        self.membrane
            .iter()
            .map(|&v| traj.count(t_index, v, self.species))
            .sum()
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    #[derive(PartialEq)]
    struct Entry(f64, usize);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            other.0.partial_cmp(&self.0).unwrap() // min-heap
        }
    }
    let mut dist = vec![f64::INFINITY; adj.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(n, w) in &adj[v] {
            let nd = d + w;
            if nd < dist[n] {
                dist[n] = nd;
                heap.push(Entry(nd, n));
            }
        }
    }
    dist
}

/// Spec-facing convenience over a metric built on the fly.
pub fn polarization_percent(
    traj: &Trajectory,
    t_index: usize,
    mesh: &Mesh,
    subs: &SubdomainMap,
    membrane_label: u32,
    species: usize,
) -> Result<f64, String> {
    let metric = PolarizationMetric::new(mesh, subs, membrane_label, species, 0.1)?;
    Ok(metric.percent(traj, t_index))
}

/// Per-trajectory polarization time series plus window statistics over
/// the final half of the time span.
#[derive(Clone, Debug)]
pub struct PolarizationSeries {
    /// (time, polarization percent, membrane count) per output time.
    pub points: Vec<(f64, f64, u64)>,
    /// Time-averaged maximum polarization over the window.
    pub window_mean_percent: f64,
    /// Standard deviation of the polarization percent over the window.
    pub window_std_percent: f64,
}

pub fn polarization_series(metric: &PolarizationMetric, traj: &Trajectory) -> PolarizationSeries {
    let points: Vec<(f64, f64, u64)> = (0..traj.n_times())
        .map(|ti| {
            (
                traj.tspan[ti],
                metric.percent(traj, ti),
                metric.membrane_count(traj, ti),
            )
        })
        .collect();
    let t0 = traj.tspan.first().copied().unwrap_or(0.0);
    let t1 = traj.tspan.last().copied().unwrap_or(0.0);
    let cutoff = t0 + 0.5 * (t1 - t0);
    let window: Vec<f64> = points
        .iter()
        .filter(|&&(t, _, _)| t >= cutoff)
        .map(|&(_, p, _)| p)
        .collect();
    let n = window.len().max(1) as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    PolarizationSeries {
        points,
        window_mean_percent: mean,
        window_std_percent: var.sqrt(),
    }
}

/// Registered post-processor: `[window mean percent, window std percent,
/// membrane count at each output time]` (arity 2 + T).
struct PolarizationProcessor {
    metric: PolarizationMetric,
    n_times: usize,
}

impl PostProcessor for PolarizationProcessor {
    fn name(&self) -> &str {
        "polarization"
    }
    fn arity(&self, _ctx: &PostContext<'_>) -> usize {
        2 + self.n_times
    }
    fn apply(&self, traj: &Trajectory, _ctx: &PostContext<'_>) -> Result<Vec<f64>, String> {
        let series = polarization_series(&self.metric, traj);
        let mut out = Vec::with_capacity(2 + series.points.len());
        out.push(series.window_mean_percent);
        out.push(series.window_std_percent);
        out.extend(series.points.iter().map(|&(_, _, c)| c as f64));
        Ok(out)
    }
}

/// Registry builder for the `polarization` spec string. Optional arg:
/// the membrane species name (default `Cdc42_m`).
pub fn build_polarization_processor(
    args: &str,
    model: &ModelSpec,
) -> Result<Arc<dyn PostProcessor>, String> {
    let species_name = if args.is_empty() { MEMBRANE_SPECIES } else { args };
    let species = model
        .species_index(species_name)
        .ok_or_else(|| format!("unknown species {species_name:?}"))?;
    let metric = PolarizationMetric::new(
        &model.mesh,
        &model.subdomains,
        LABEL_SURFACE,
        species,
        0.1,
    )?;
    Ok(Arc::new(PolarizationProcessor {
        metric,
        n_times: model.tspan.len(),
    }))
}

/// Density-dependent switch sweep: one no-storage ensemble per total
/// molecule count, each summarized by the polarization processor.
pub fn run_switch_sweep(
    n_values: &[u64],
    params: &YeastParams,
    ensemble_size: usize,
    workers: usize,
    base_seed: u64,
) -> Result<SweepTable, EngineError> {
    let registry = Registry::with_builtins();
    let base = build_yeast_model(n_values.first().copied().unwrap_or(0), params)?;
    let params = *params;
    run_sweep_with_factory(
        base,
        &[(
            "N_total".to_string(),
            n_values.iter().map(|&n| n as f64).collect(),
        )],
        ensemble_size,
        "polarization",
        workers,
        StorageMode::NoStorage,
        None,
        base_seed,
        "yeast-switch",
        &registry,
        move |_base, values| {
            let n = values[0].1 as u64;
            Ok(build_yeast_model(n, &params)?)
        },
    )
}
