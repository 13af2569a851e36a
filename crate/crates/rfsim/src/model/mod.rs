//! Declarative model specification: species, parameters, reactions with
//! parsed propensities, subdomain restrictions, initial conditions and
//! output times.
//!
//! A `ModelSpec` is validated into a `CompiledModel` before simulation:
//! names resolve to indices, stoichiometry becomes change vectors, and
//! custom propensity expressions are bound. Compiled models are immutable
//! and safe to share across concurrently running realizations; RNGs are
//! always passed in, never global.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::{BoundExpr, Expr, ExprError, Slot};
use crate::mesh::{
    assemble_diffusion, DiffusionMatrix, GeometryError, Mesh, SpeciesTransport, SubdomainMap,
};
use crate::rng::SimRng;

mod file;

pub use file::{parse_model, parse_model_str, write_model_string};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model is invalid: {}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("species {species:?} is not permitted in subdomain {label}")]
    ForbiddenSubdomain { species: String, label: u32 },
    #[error("unknown species {0:?}")]
    UnknownSpecies(String),
    #[error("model parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Stable machine-readable validation codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagnosticCode {
    DuplicateSpecies,
    DuplicateParameter,
    NameClash,
    NegativeDiffusion,
    NonFiniteValue,
    UndeclaredSpecies,
    UndeclaredParameter,
    UnknownSubdomain,
    MassActionOrder,
    EmptyStoichiometry,
    UnresolvedIdentifier,
    EmptyTspan,
    TspanNotIncreasing,
    InitialForbidden,
    InitialOutOfRange,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::DuplicateSpecies => "DUPLICATE_SPECIES",
            DiagnosticCode::DuplicateParameter => "DUPLICATE_PARAMETER",
            DiagnosticCode::NameClash => "NAME_CLASH",
            DiagnosticCode::NegativeDiffusion => "NEGATIVE_DIFFUSION",
            DiagnosticCode::NonFiniteValue => "NONFINITE_VALUE",
            DiagnosticCode::UndeclaredSpecies => "UNDECLARED_SPECIES",
            DiagnosticCode::UndeclaredParameter => "UNDECLARED_PARAMETER",
            DiagnosticCode::UnknownSubdomain => "UNKNOWN_SUBDOMAIN",
            DiagnosticCode::MassActionOrder => "MASS_ACTION_ORDER",
            DiagnosticCode::EmptyStoichiometry => "EMPTY_STOICHIOMETRY",
            DiagnosticCode::UnresolvedIdentifier => "UNRESOLVED_IDENTIFIER",
            DiagnosticCode::EmptyTspan => "EMPTY_TSPAN",
            DiagnosticCode::TspanNotIncreasing => "TSPAN_NOT_INCREASING",
            DiagnosticCode::InitialForbidden => "INITIAL_FORBIDDEN",
            DiagnosticCode::InitialOutOfRange => "INITIAL_OUT_OF_RANGE",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

#[derive(Clone, Debug)]
pub struct Species {
    pub name: String,
    /// Length^2 / time; zero means the species never diffuses.
    pub diffusion_constant: f64,
    pub allowed_subdomains: BTreeSet<u32>,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
}

/// Rate constant of a mass-action reaction: a named parameter or literal.
#[derive(Clone, Debug, PartialEq)]
pub enum RateConstant {
    Param(String),
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Propensity {
    /// Mesoscopic mass action; see [`mass_action_propensity`] for the
    /// voxel-volume scaling convention.
    MassAction(RateConstant),
    /// Custom expression evaluated per voxel with `vol` bound to that
    /// voxel's volume.
    Custom(Expr),
}

#[derive(Clone, Debug)]
pub struct Reaction {
    pub name: String,
    pub reactants: BTreeMap<String, u32>,
    pub products: BTreeMap<String, u32>,
    pub propensity: Propensity,
    /// Subdomain labels the reaction may fire in; `None` = everywhere.
    pub restrict_to: Option<BTreeSet<u32>>,
}

/// Initial-condition directives, applied in order to a zero state.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialDirective {
    /// Place `count` molecules independently in voxels of `subdomain`,
    /// each with probability proportional to voxel volume. Sampled per
    /// realization from the realization's seed.
    Scatter {
        species: String,
        count: u64,
        subdomain: u32,
    },
    /// Assign an exact count in one voxel.
    Set {
        species: String,
        voxel: usize,
        count: u64,
    },
}

/// How the mesh was specified; kept so models serialize faithfully.
#[derive(Clone, Debug, PartialEq)]
pub enum MeshSource {
    Grid {
        dim: u8,
        lengths: Vec<f64>,
        counts: Vec<usize>,
    },
    Sphere {
        radius: f64,
        subdiv: u32,
    },
    File(String),
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub species: Vec<Species>,
    pub parameters: Vec<Parameter>,
    pub reactions: Vec<Reaction>,
    pub mesh_source: MeshSource,
    pub mesh: Mesh,
    pub subdomains: SubdomainMap,
    pub initial: Vec<InitialDirective>,
    /// Output times, strictly increasing; the first entry is the initial
    /// time of every realization.
    pub tspan: Vec<f64>,
}

impl ModelSpec {
    /// Empty model over an existing discretization.
    pub fn new(mesh_source: MeshSource, mesh: Mesh, subdomains: SubdomainMap) -> Self {
        ModelSpec {
            species: Vec::new(),
            parameters: Vec::new(),
            reactions: Vec::new(),
            mesh_source,
            mesh,
            subdomains,
            initial: Vec::new(),
            tspan: Vec::new(),
        }
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        match self.parameters.iter_mut().find(|p| p.name == name) {
            Some(p) => {
                p.value = value;
                Ok(())
            }
            None => Err(ModelError::UnknownSpecies(format!("parameter {name}"))),
        }
    }

    /// Evenly spaced output times from `t0` to `t1` inclusive.
    pub fn set_tspan_linspace(&mut self, t0: f64, t1: f64, n: usize) {
        self.tspan = linspace(t0, t1, n);
    }

    /// Sample a scatter placement now with the caller's RNG and record it
    /// as exact per-voxel counts. The total placed equals `count`.
    pub fn scatter_initial(
        &mut self,
        species: &str,
        count: u64,
        subdomain: u32,
        rng: &mut SimRng,
    ) -> Result<(), ModelError> {
        let s = self
            .species_index(species)
            .ok_or_else(|| ModelError::UnknownSpecies(species.into()))?;
        if !self.species[s].allowed_subdomains.contains(&subdomain) {
            return Err(ModelError::ForbiddenSubdomain {
                species: species.into(),
                label: subdomain,
            });
        }
        let placed = scatter_counts(&self.mesh, &self.subdomains, subdomain, count, rng);
        for (voxel, c) in placed {
            self.initial.push(InitialDirective::Set {
                species: species.into(),
                voxel,
                count: c,
            });
        }
        Ok(())
    }

    /// Check every invariant; the model is well-formed iff this is empty.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        let mut push = |code, message: String| diags.push(Diagnostic { code, message });

        let mut seen = BTreeSet::new();
        for sp in &self.species {
            if !seen.insert(sp.name.clone()) {
                push(
                    DiagnosticCode::DuplicateSpecies,
                    format!("species {:?} declared twice", sp.name),
                );
            }
            if !sp.diffusion_constant.is_finite() {
                push(
                    DiagnosticCode::NonFiniteValue,
                    format!("species {:?} has non-finite diffusion constant", sp.name),
                );
            } else if sp.diffusion_constant < 0.0 {
                push(
                    DiagnosticCode::NegativeDiffusion,
                    format!("species {:?} has negative diffusion constant", sp.name),
                );
            }
            for &label in &sp.allowed_subdomains {
                if !self.subdomains.is_declared(label) {
                    push(
                        DiagnosticCode::UnknownSubdomain,
                        format!("species {:?} allows undeclared subdomain {label}", sp.name),
                    );
                }
            }
        }
        let species_names: BTreeSet<&str> = self.species.iter().map(|s| s.name.as_str()).collect();
        let mut pseen = BTreeSet::new();
        for p in &self.parameters {
            if !pseen.insert(p.name.clone()) {
                push(
                    DiagnosticCode::DuplicateParameter,
                    format!("parameter {:?} declared twice", p.name),
                );
            }
            if species_names.contains(p.name.as_str()) {
                push(
                    DiagnosticCode::NameClash,
                    format!("{:?} is both a species and a parameter", p.name),
                );
            }
            if !p.value.is_finite() {
                push(
                    DiagnosticCode::NonFiniteValue,
                    format!("parameter {:?} has non-finite value", p.name),
                );
            }
        }
        let param_names: BTreeSet<&str> = self.parameters.iter().map(|p| p.name.as_str()).collect();

        for rx in &self.reactions {
            for name in rx.reactants.keys().chain(rx.products.keys()) {
                if !species_names.contains(name.as_str()) {
                    push(
                        DiagnosticCode::UndeclaredSpecies,
                        format!("reaction {:?} references undeclared species {name:?}", rx.name),
                    );
                }
            }
            let mut delta: BTreeMap<&str, i64> = BTreeMap::new();
            for (n, &c) in &rx.reactants {
                *delta.entry(n.as_str()).or_insert(0) -= i64::from(c);
            }
            for (n, &c) in &rx.products {
                *delta.entry(n.as_str()).or_insert(0) += i64::from(c);
            }
            if delta.values().all(|&d| d == 0) {
                push(
                    DiagnosticCode::EmptyStoichiometry,
                    format!("reaction {:?} does not change the state", rx.name),
                );
            }
            match &rx.propensity {
                Propensity::MassAction(rc) => {
                    let order: u32 = rx.reactants.values().sum();
                    if order > 2 {
                        push(
                            DiagnosticCode::MassActionOrder,
                            format!(
                                "mass-action reaction {:?} has {order} reactant molecules (max 2)",
                                rx.name
                            ),
                        );
                    }
                    if let RateConstant::Param(p) = rc {
                        if !param_names.contains(p.as_str()) {
                            push(
                                DiagnosticCode::UndeclaredParameter,
                                format!("reaction {:?} rate uses undeclared parameter {p:?}", rx.name),
                            );
                        }
                    }
                }
                Propensity::Custom(expr) => {
                    for ident in expr.identifiers() {
                        let known = ident == "vol"
                            || species_names.contains(ident)
                            || param_names.contains(ident);
                        if !known {
                            push(
                                DiagnosticCode::UnresolvedIdentifier,
                                format!(
                                    "reaction {:?} propensity references unknown {ident:?}",
                                    rx.name
                                ),
                            );
                        }
                    }
                }
            }
            if let Some(labels) = &rx.restrict_to {
                for &label in labels {
                    if !self.subdomains.is_declared(label) {
                        push(
                            DiagnosticCode::UnknownSubdomain,
                            format!("reaction {:?} restricted to undeclared subdomain {label}", rx.name),
                        );
                    }
                }
            }
        }

        if self.tspan.is_empty() {
            push(DiagnosticCode::EmptyTspan, "tspan is empty".into());
        } else {
            if self.tspan.iter().any(|t| !t.is_finite()) || self.tspan[0] < 0.0 {
                push(
                    DiagnosticCode::NonFiniteValue,
                    "tspan values must be finite and start at t >= 0".into(),
                );
            }
            if self.tspan.windows(2).any(|w| w[1] <= w[0]) {
                push(
                    DiagnosticCode::TspanNotIncreasing,
                    "tspan must be strictly increasing".into(),
                );
            }
        }

        for d in &self.initial {
            let (species, place) = match d {
                InitialDirective::Scatter {
                    species, subdomain, ..
                } => (species, Ok(*subdomain)),
                InitialDirective::Set { species, voxel, .. } => {
                    if *voxel >= self.mesh.n_voxels() {
                        push(
                            DiagnosticCode::InitialOutOfRange,
                            format!("initial condition references voxel {voxel} of {}", self.mesh.n_voxels()),
                        );
                        continue;
                    }
                    (species, Err(self.subdomains.label(*voxel)))
                }
            };
            let Some(idx) = self.species_index(species) else {
                push(
                    DiagnosticCode::UndeclaredSpecies,
                    format!("initial condition references undeclared species {species:?}"),
                );
                continue;
            };
            let allowed = &self.species[idx].allowed_subdomains;
            match place {
                Ok(subdomain) => {
                    if !self.subdomains.is_declared(subdomain) {
                        push(
                            DiagnosticCode::UnknownSubdomain,
                            format!("scatter into undeclared subdomain {subdomain}"),
                        );
                    } else if !allowed.contains(&subdomain) {
                        push(
                            DiagnosticCode::InitialForbidden,
                            format!("species {species:?} scattered into forbidden subdomain {subdomain}"),
                        );
                    }
                }
                Err(label) => {
                    if !allowed.contains(&label) {
                        push(
                            DiagnosticCode::InitialForbidden,
                            format!("species {species:?} placed in voxel with forbidden subdomain {label}"),
                        );
                    }
                }
            }
        }

        diags
    }

    /// Validate, then resolve all names to indices for simulation.
    pub fn compile(&self) -> Result<CompiledModel<'_>, ModelError> {
        let diags = self.validate();
        if !diags.is_empty() {
            return Err(ModelError::Invalid(diags));
        }
        let species_index: HashMap<&str, usize> = self
            .species
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        let param_index: HashMap<&str, usize> = self
            .parameters
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.as_str(), i))
            .collect();
        let param_values: Vec<f64> = self.parameters.iter().map(|p| p.value).collect();

        let k = self.mesh.n_voxels();
        let mut reactions = Vec::with_capacity(self.reactions.len());
        for rx in &self.reactions {
            let reactants: Vec<(usize, u32)> = rx
                .reactants
                .iter()
                .map(|(n, &c)| (species_index[n.as_str()], c))
                .collect();
            let mut delta_map: BTreeMap<usize, i64> = BTreeMap::new();
            for (n, &c) in &rx.reactants {
                *delta_map.entry(species_index[n.as_str()]).or_insert(0) -= i64::from(c);
            }
            for (n, &c) in &rx.products {
                *delta_map.entry(species_index[n.as_str()]).or_insert(0) += i64::from(c);
            }
            let delta: Vec<(usize, i64)> =
                delta_map.into_iter().filter(|&(_, d)| d != 0).collect();

            let kind = match &rx.propensity {
                Propensity::MassAction(rc) => {
                    let kval = match rc {
                        RateConstant::Value(v) => *v,
                        RateConstant::Param(p) => param_values[param_index[p.as_str()]],
                    };
                    CompiledPropensity::MassAction { k: kval }
                }
                Propensity::Custom(expr) => {
                    let bound = expr.bind(&|name| {
                        if name == "vol" {
                            Some(Slot::Volume)
                        } else if let Some(&i) = species_index.get(name) {
                            Some(Slot::Species(i))
                        } else {
                            param_index.get(name).map(|&i| Slot::Parameter(i))
                        }
                    })?;
                    CompiledPropensity::Custom(bound)
                }
            };
            let allowed_voxels = rx.restrict_to.as_ref().map(|labels| {
                (0..k)
                    .map(|v| labels.contains(&self.subdomains.label(v)))
                    .collect()
            });
            reactions.push(CompiledReaction {
                reactants,
                delta,
                kind,
                allowed_voxels,
            });
        }

        Ok(CompiledModel {
            model: self,
            param_values,
            reactions,
            content_hash: self.content_hash(),
        })
    }

    /// Diffusion matrix for this model's species over its mesh.
    pub fn assemble_diffusion(&self) -> Result<DiffusionMatrix, GeometryError> {
        let transports: Vec<SpeciesTransport> = self
            .species
            .iter()
            .map(|s| SpeciesTransport {
                name: s.name.clone(),
                diffusion_constant: s.diffusion_constant,
                allowed_subdomains: s.allowed_subdomains.clone(),
            })
            .collect();
        assemble_diffusion(&self.mesh, &self.subdomains, &transports)
    }

    /// SHA-256 over the canonical model text plus the mesh it references;
    /// identical models hash identically on every platform.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(write_model_string(self).as_bytes());
        h.update([0u8]);
        h.update(crate::mesh::write_mesh_string(&self.mesh, &self.subdomains).as_bytes());
        h.finalize().into()
    }
}

pub fn linspace(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t0],
        _ => (0..n)
            .map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Multinomial scatter over the voxels of one subdomain, weighted by
/// voxel volume. Returns (voxel, count) pairs covering exactly `count`
/// molecules; never touches a voxel outside the subdomain.
fn scatter_counts(
    mesh: &Mesh,
    subs: &SubdomainMap,
    subdomain: u32,
    count: u64,
    rng: &mut SimRng,
) -> Vec<(usize, u64)> {
    let voxels = subs.voxels_with(subdomain);
    if voxels.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut cumulative = Vec::with_capacity(voxels.len());
    let mut total = 0.0;
    for &v in &voxels {
        total += mesh.volume(v);
        cumulative.push(total);
    }
    let mut placed = vec![0u64; voxels.len()];
    for _ in 0..count {
        let r = rng.next_f64() * total;
        let idx = cumulative.partition_point(|&c| c <= r).min(voxels.len() - 1);
        placed[idx] += 1;
    }
    voxels
        .into_iter()
        .zip(placed)
        .filter(|&(_, c)| c > 0)
        .collect()
}

/// Mass-action propensity with mesoscopic volume scaling.
///
/// Conventions (`k` keeps macroscopic units):
/// - zero-order: `k * V`
/// - unimolecular `A -> ...`: `k * x_A`
/// - bimolecular `A + B -> ...`: `(k / V) * x_A * x_B`
/// - dimerization `2A -> ...`: `(k / V) * x_A * (x_A - 1) / 2`
///   (the combinatorial 1/2 is explicit, *not* folded into `k`)
pub fn mass_action_propensity(
    k: f64,
    reactants: &[(usize, u32)],
    counts: &dyn Fn(usize) -> f64,
    volume: f64,
) -> f64 {
    let order: u32 = reactants.iter().map(|&(_, c)| c).sum();
    match order {
        0 => k * volume,
        1 => k * counts(reactants[0].0),
        2 => {
            if reactants.len() == 2 {
                k / volume * counts(reactants[0].0) * counts(reactants[1].0)
            } else {
                let x = counts(reactants[0].0);
                k / volume * x * (x - 1.0) / 2.0
            }
        }
        _ => f64::NAN, // rejected by validation
    }
}

#[derive(Clone, Debug)]
pub enum CompiledPropensity {
    MassAction { k: f64 },
    Custom(BoundExpr),
}

/// One reaction with names resolved for the solvers.
#[derive(Clone, Debug)]
pub struct CompiledReaction {
    pub reactants: Vec<(usize, u32)>,
    /// Net state change as (species, delta) pairs.
    pub delta: Vec<(usize, i64)>,
    pub kind: CompiledPropensity,
    /// Per-voxel firing mask; `None` = allowed everywhere.
    pub allowed_voxels: Option<Vec<bool>>,
}

impl CompiledReaction {
    pub fn allowed_in(&self, voxel: usize) -> bool {
        self.allowed_voxels.as_ref().map_or(true, |m| m[voxel])
    }
}

/// Validated, index-resolved model ready for simulation.
pub struct CompiledModel<'m> {
    pub model: &'m ModelSpec,
    pub param_values: Vec<f64>,
    pub reactions: Vec<CompiledReaction>,
    /// Cached [`ModelSpec::content_hash`].
    pub content_hash: [u8; 32],
}

impl CompiledModel<'_> {
    pub fn n_voxels(&self) -> usize {
        self.model.mesh.n_voxels()
    }

    pub fn n_species(&self) -> usize {
        self.model.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.reactions.len()
    }

    /// Propensity of reaction `r` in `voxel` given the voxel's counts.
    /// Negative or non-finite custom propensities are reported, never
    /// clamped.
    pub fn propensity(
        &self,
        r: usize,
        voxel: usize,
        counts: &dyn Fn(usize) -> f64,
    ) -> Result<f64, PropensityFault> {
        let rx = &self.reactions[r];
        if !rx.allowed_in(voxel) {
            return Ok(0.0);
        }
        let vol = self.model.mesh.volume(voxel);
        let a = match &rx.kind {
            CompiledPropensity::MassAction { k } => {
                mass_action_propensity(*k, &rx.reactants, counts, vol)
            }
            CompiledPropensity::Custom(expr) => expr.eval(counts, &self.param_values, vol),
        };
        if !a.is_finite() || a < 0.0 {
            return Err(PropensityFault { reaction: r, voxel, value: a });
        }
        Ok(a)
    }

    /// Materialize the initial K x S count matrix (voxel-major) from the
    /// model's directives, sampling scatters with the given RNG.
    pub fn initial_state(&self, rng: &mut SimRng) -> Vec<u64> {
        let s = self.n_species();
        let mut state = vec![0u64; self.n_voxels() * s];
        for d in &self.model.initial {
            match d {
                InitialDirective::Set { species, voxel, count } => {
                    let si = self.model.species_index(species).unwrap();
                    state[voxel * s + si] = *count;
                }
                InitialDirective::Scatter { species, count, subdomain } => {
                    let si = self.model.species_index(species).unwrap();
                    for (voxel, c) in scatter_counts(
                        &self.model.mesh,
                        &self.model.subdomains,
                        *subdomain,
                        *count,
                        rng,
                    ) {
                        state[voxel * s + si] += c;
                    }
                }
            }
        }
        state
    }
}

/// A propensity evaluated to a negative or non-finite value.
#[derive(Clone, Copy, Debug)]
pub struct PropensityFault {
    pub reaction: usize,
    pub voxel: usize,
    pub value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_cartesian_grid;

    fn grid_model(k: usize) -> ModelSpec {
        let mesh = build_cartesian_grid(1, &[1.0], &[k]).unwrap();
        let subs = SubdomainMap::uniform(k, 1);
        let mut m = ModelSpec::new(
            MeshSource::Grid {
                dim: 1,
                lengths: vec![1.0],
                counts: vec![k],
            },
            mesh,
            subs,
        );
        m.tspan = vec![0.0, 1.0];
        m
    }

    fn species(name: &str) -> Species {
        Species {
            name: name.into(),
            diffusion_constant: 0.0,
            allowed_subdomains: [1u32].into_iter().collect(),
        }
    }

    #[test]
    fn mass_action_examples() {
        // A -> B with k=2 and an empty voxel
        assert_eq!(mass_action_propensity(2.0, &[(0, 1)], &|_| 0.0, 1.0), 0.0);
        // A + B -> C, k=1, V=2, xA=3, xB=4
        let counts = |i: usize| [3.0, 4.0][i];
        assert_eq!(mass_action_propensity(1.0, &[(0, 1), (1, 1)], &counts, 2.0), 6.0);
        // 2A -> B, k=1, V=1, xA=3: (k/V) x (x-1) / 2 = 3
        assert_eq!(mass_action_propensity(1.0, &[(0, 2)], &|_| 3.0, 1.0), 3.0);
        // zero-order birth scales with volume
        assert_eq!(mass_action_propensity(5.0, &[], &|_| 0.0, 2.0), 10.0);
    }

    #[test]
    fn scatter_count_zero_changes_nothing() {
        let mut m = grid_model(4);
        m.species.push(species("A"));
        let before = m.initial.clone();
        let mut rng = SimRng::new(1);
        m.scatter_initial("A", 0, 1, &mut rng).unwrap();
        assert_eq!(m.initial, before);
    }

    #[test]
    fn scatter_single_voxel_gets_everything() {
        let mut m = grid_model(1);
        m.species.push(species("A"));
        let mut rng = SimRng::new(1);
        m.scatter_initial("A", 5, 1, &mut rng).unwrap();
        assert_eq!(
            m.initial,
            vec![InitialDirective::Set {
                species: "A".into(),
                voxel: 0,
                count: 5
            }]
        );
    }

    #[test]
    fn scatter_two_equal_voxels_is_binomial() {
        // 200 trials of 1000 molecules over two equal voxels: the mean
        // fraction in voxel 0 sits within 0.05 of one half.
        let mut total0 = 0u64;
        for trial in 0..200 {
            let mut m = grid_model(2);
            m.species.push(species("A"));
            let mut rng = SimRng::new(trial);
            m.scatter_initial("A", 1000, 1, &mut rng).unwrap();
            for d in &m.initial {
                if let InitialDirective::Set { voxel: 0, count, .. } = d {
                    total0 += count;
                }
            }
        }
        let mean_fraction = total0 as f64 / (200.0 * 1000.0);
        assert!((mean_fraction - 0.5).abs() < 0.05, "fraction {mean_fraction}");
    }

    #[test]
    fn scatter_respects_subdomains() {
        let mut m = grid_model(6);
        let mut labels = vec![1u32; 6];
        labels[3] = 2;
        labels[4] = 2;
        m.subdomains = SubdomainMap::new(labels);
        m.species.push(Species {
            name: "M".into(),
            diffusion_constant: 0.0,
            allowed_subdomains: [2u32].into_iter().collect(),
        });
        let mut rng = SimRng::new(9);
        m.scatter_initial("M", 500, 2, &mut rng).unwrap();
        for d in &m.initial {
            if let InitialDirective::Set { voxel, .. } = d {
                assert!(m.subdomains.label(*voxel) == 2);
            }
        }
        // forbidden subdomain is a model error
        let err = m.scatter_initial("M", 1, 1, &mut rng);
        assert!(matches!(err, Err(ModelError::ForbiddenSubdomain { .. })));
    }

    #[test]
    fn validate_flags_undeclared_species_and_empty_tspan() {
        let mut m = grid_model(2);
        m.species.push(species("A"));
        m.reactions.push(Reaction {
            name: "r1".into(),
            reactants: [("Ghost".to_string(), 1u32)].into_iter().collect(),
            products: [("A".to_string(), 1u32)].into_iter().collect(),
            propensity: Propensity::MassAction(RateConstant::Value(1.0)),
            restrict_to: None,
        });
        m.tspan.clear();
        let diags = m.validate();
        let codes: Vec<_> = diags.iter().map(|d| d.code).collect();
        assert!(codes.contains(&DiagnosticCode::UndeclaredSpecies));
        assert!(codes.contains(&DiagnosticCode::EmptyTspan));
    }

    #[test]
    fn validate_accepts_well_formed_model() {
        let mut m = grid_model(3);
        m.species.push(species("A"));
        m.species.push(species("B"));
        m.parameters.push(Parameter { name: "k1".into(), value: 2.0 });
        m.reactions.push(Reaction {
            name: "convert".into(),
            reactants: [("A".to_string(), 1u32)].into_iter().collect(),
            products: [("B".to_string(), 1u32)].into_iter().collect(),
            propensity: Propensity::MassAction(RateConstant::Param("k1".into())),
            restrict_to: None,
        });
        m.initial.push(InitialDirective::Set {
            species: "A".into(),
            voxel: 0,
            count: 10,
        });
        assert!(m.validate().is_empty(), "{:?}", m.validate());
        assert!(m.compile().is_ok());
    }

    #[test]
    fn validate_flags_mass_action_order_and_zero_stoichiometry() {
        let mut m = grid_model(2);
        m.species.push(species("A"));
        m.reactions.push(Reaction {
            name: "threebody".into(),
            reactants: [("A".to_string(), 3u32)].into_iter().collect(),
            products: [("A".to_string(), 4u32)].into_iter().collect(),
            propensity: Propensity::MassAction(RateConstant::Value(1.0)),
            restrict_to: None,
        });
        m.reactions.push(Reaction {
            name: "noop".into(),
            reactants: [("A".to_string(), 1u32)].into_iter().collect(),
            products: [("A".to_string(), 1u32)].into_iter().collect(),
            propensity: Propensity::MassAction(RateConstant::Value(1.0)),
            restrict_to: None,
        });
        let codes: Vec<_> = m.validate().iter().map(|d| d.code).collect();
        assert!(codes.contains(&DiagnosticCode::MassActionOrder));
        assert!(codes.contains(&DiagnosticCode::EmptyStoichiometry));
    }

    #[test]
    fn compile_binds_custom_propensities() {
        let mut m = grid_model(2);
        m.species.push(species("A"));
        m.parameters.push(Parameter { name: "k".into(), value: 3.0 });
        m.reactions.push(Reaction {
            name: "decay".into(),
            reactants: [("A".to_string(), 1u32)].into_iter().collect(),
            products: BTreeMap::new(),
            propensity: Propensity::Custom(
                crate::expr::parse_propensity("k*A/vol").unwrap(),
            ),
            restrict_to: None,
        });
        let compiled = m.compile().unwrap();
        let a = compiled.propensity(0, 0, &|_| 4.0).unwrap();
        // voxel 0 of a 2-vertex unit grid has volume 0.5
        assert!((a - 3.0 * 4.0 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn negative_custom_propensity_is_a_fault_not_a_clamp() {
        let mut m = grid_model(1);
        m.species.push(species("A"));
        m.reactions.push(Reaction {
            name: "bad".into(),
            reactants: BTreeMap::new(),
            products: [("A".to_string(), 1u32)].into_iter().collect(),
            propensity: Propensity::Custom(crate::expr::parse_propensity("1 - A").unwrap()),
            restrict_to: None,
        });
        let compiled = m.compile().unwrap();
        let fault = compiled.propensity(0, 0, &|_| 5.0).unwrap_err();
        assert_eq!(fault.reaction, 0);
        assert_eq!(fault.value, -4.0);
    }
}
