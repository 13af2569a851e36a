//! Post-processors: named pure functions reducing one trajectory to a
//! fixed-length vector of reals before ensemble averaging.
//!
//! Processors are chosen from a registry by spec string (`name` or
//! `name:args`), so a post-processing request can travel to any worker
//! as plain text. Library users can also register closures.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::model::ModelSpec;
use crate::trajectory::{Scope, Trajectory};

/// Everything a processor may consult besides the trajectory itself.
pub struct PostContext<'a> {
    pub model: &'a ModelSpec,
}

pub trait PostProcessor: Send + Sync {
    fn name(&self) -> &str;
    /// Output vector length; fixed per (processor, model) pair.
    fn arity(&self, ctx: &PostContext<'_>) -> usize;
    fn apply(&self, traj: &Trajectory, ctx: &PostContext<'_>) -> Result<Vec<f64>, String>;
}

/// Closure-backed processor for library users.
pub struct FnProcessor<F> {
    name: String,
    arity: usize,
    f: F,
}

impl<F> FnProcessor<F>
where
    F: Fn(&Trajectory, &PostContext<'_>) -> Result<Vec<f64>, String> + Send + Sync,
{
    pub fn new(name: &str, arity: usize, f: F) -> Self {
        FnProcessor {
            name: name.to_string(),
            arity,
            f,
        }
    }
}

impl<F> PostProcessor for FnProcessor<F>
where
    F: Fn(&Trajectory, &PostContext<'_>) -> Result<Vec<f64>, String> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn arity(&self, _ctx: &PostContext<'_>) -> usize {
        self.arity
    }
    fn apply(&self, traj: &Trajectory, ctx: &PostContext<'_>) -> Result<Vec<f64>, String> {
        (self.f)(traj, ctx)
    }
}

type Builder =
    Box<dyn Fn(&str, &ModelSpec) -> Result<Arc<dyn PostProcessor>, String> + Send + Sync>;

/// Named post-processor constructors.
pub struct Registry {
    builders: BTreeMap<String, Builder>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            builders: BTreeMap::new(),
        }
    }

    /// Registry with the built-in processors:
    ///
    /// - `final-count:<species>`: domain total of one species at the
    ///   final output time (1 component)
    /// - `final-state`: domain totals of every species at the final time
    ///   (S components)
    /// - `total-series:<species>`: domain total at every output time
    ///   (T components)
    /// - `subdomain-series:<species>:<label>`: per-time total over one
    ///   subdomain (T components)
    /// - `polarization`: the case-study metric, see the `polarization`
    ///   module (2 + T components)
    pub fn with_builtins() -> Self {
        let mut r = Registry::empty();
        r.register("final-count", |args, model| {
            let species = resolve_species(model, args)?;
            Ok(Arc::new(FinalCount { species }) as Arc<dyn PostProcessor>)
        });
        r.register("final-state", |args, _model| {
            if !args.is_empty() {
                return Err("final-state takes no arguments".into());
            }
            Ok(Arc::new(FinalState) as Arc<dyn PostProcessor>)
        });
        r.register("total-series", |args, model| {
            let species = resolve_species(model, args)?;
            Ok(Arc::new(TotalSeries { species }) as Arc<dyn PostProcessor>)
        });
        r.register("subdomain-series", |args, model| {
            let (sp, label) = args
                .split_once(':')
                .ok_or("subdomain-series needs <species>:<label>")?;
            let species = resolve_species(model, sp)?;
            let label: u32 = label.parse().map_err(|_| format!("bad label {label:?}"))?;
            Ok(Arc::new(SubdomainSeries { species, label }) as Arc<dyn PostProcessor>)
        });
        r.register("polarization", |args, model| {
            crate::polarization::build_polarization_processor(args, model)
        });
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        build: impl Fn(&str, &ModelSpec) -> Result<Arc<dyn PostProcessor>, String> + Send + Sync + 'static,
    ) {
        self.builders.insert(name.to_string(), Box::new(build));
    }

    /// Resolve a spec string `name` or `name:args` against a model.
    pub fn resolve(
        &self,
        spec: &str,
        model: &ModelSpec,
    ) -> Result<Arc<dyn PostProcessor>, String> {
        let (name, args) = match spec.split_once(':') {
            Some((n, a)) => (n, a),
            None => (spec, ""),
        };
        let builder = self
            .builders
            .get(name)
            .ok_or_else(|| format!("unknown post-processor {name:?}"))?;
        builder(args, model)
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }
}

fn resolve_species(model: &ModelSpec, name: &str) -> Result<usize, String> {
    model
        .species_index(name)
        .ok_or_else(|| format!("unknown species {name:?}"))
}

struct FinalCount {
    species: usize,
}

impl PostProcessor for FinalCount {
    fn name(&self) -> &str {
        "final-count"
    }
    fn arity(&self, _ctx: &PostContext<'_>) -> usize {
        1
    }
    fn apply(&self, traj: &Trajectory, _ctx: &PostContext<'_>) -> Result<Vec<f64>, String> {
        let series = traj
            .timeseries(self.species, Scope::Domain)
            .map_err(|e| e.to_string())?;
        Ok(vec![series.last().map_or(0.0, |&(_, c)| c as f64)])
    }
}

struct FinalState;

impl PostProcessor for FinalState {
    fn name(&self) -> &str {
        "final-state"
    }
    fn arity(&self, ctx: &PostContext<'_>) -> usize {
        ctx.model.n_species()
    }
    fn apply(&self, traj: &Trajectory, _ctx: &PostContext<'_>) -> Result<Vec<f64>, String> {
        let last = traj.n_times() - 1;
        Ok((0..traj.n_species)
            .map(|s| {
                (0..traj.n_voxels)
                    .map(|v| traj.count(last, v, s) as f64)
                    .sum()
            })
            .collect())
    }
}

struct TotalSeries {
    species: usize,
}

impl PostProcessor for TotalSeries {
    fn name(&self) -> &str {
        "total-series"
    }
    fn arity(&self, ctx: &PostContext<'_>) -> usize {
        ctx.model.tspan.len()
    }
    fn apply(&self, traj: &Trajectory, _ctx: &PostContext<'_>) -> Result<Vec<f64>, String> {
        Ok(traj
            .timeseries(self.species, Scope::Domain)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(_, c)| c as f64)
            .collect())
    }
}

struct SubdomainSeries {
    species: usize,
    label: u32,
}

impl PostProcessor for SubdomainSeries {
    fn name(&self) -> &str {
        "subdomain-series"
    }
    fn arity(&self, ctx: &PostContext<'_>) -> usize {
        ctx.model.tspan.len()
    }
    fn apply(&self, traj: &Trajectory, ctx: &PostContext<'_>) -> Result<Vec<f64>, String> {
        Ok(traj
            .timeseries(self.species, Scope::Subdomain(self.label, &ctx.model.subdomains))
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(_, c)| c as f64)
            .collect())
    }
}
