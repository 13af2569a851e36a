//! Per-species diffusion jump-rate assembly.
//!
//! Rates follow the edge-based finite-volume form
//! `rate(i -> j) = D * A_ij / (h_ij * V_i)`, which is positive by
//! construction and reduces to `D / h^2` on uniform Cartesian grids. Each
//! row, read as a CTMC generator for a single molecule (off-diagonals =
//! jump rates, diagonal = -exit rate), sums to zero exactly because the
//! stored exit rate *is* the sum of the stored jump rates.

use std::collections::BTreeSet;

use super::{GeometryError, Mesh, SubdomainMap};

/// Transport properties of one species, as diffusion assembly needs them.
#[derive(Clone, Debug)]
pub struct SpeciesTransport {
    pub name: String,
    pub diffusion_constant: f64,
    pub allowed_subdomains: BTreeSet<u32>,
}

/// Jump rates of one species over the mesh.
#[derive(Clone, Debug)]
pub struct SpeciesRates {
    /// Per source voxel: (destination, rate), sorted by destination.
    rows: Vec<Vec<(usize, f64)>>,
    /// Per source voxel: sum of outgoing rates.
    exit: Vec<f64>,
}

impl SpeciesRates {
    pub fn row(&self, voxel: usize) -> &[(usize, f64)] {
        &self.rows[voxel]
    }

    /// Total exit rate for one molecule sitting in `voxel`.
    pub fn exit_rate(&self, voxel: usize) -> f64 {
        self.exit[voxel]
    }
}

/// Per-species sparse voxel-to-voxel jump rate table.
#[derive(Clone, Debug)]
pub struct DiffusionMatrix {
    species: Vec<SpeciesRates>,
    n_voxels: usize,
}

impl DiffusionMatrix {
    /// Empty matrix (no species or no edges); the pure well-mixed case.
    pub fn empty(n_voxels: usize, n_species: usize) -> Self {
        DiffusionMatrix {
            species: (0..n_species)
                .map(|_| SpeciesRates {
                    rows: vec![Vec::new(); n_voxels],
                    exit: vec![0.0; n_voxels],
                })
                .collect(),
            n_voxels,
        }
    }

    pub fn n_voxels(&self) -> usize {
        self.n_voxels
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn species(&self, s: usize) -> &SpeciesRates {
        &self.species[s]
    }

    pub fn rate(&self, s: usize, from: usize, to: usize) -> f64 {
        self.species[s].rows[from]
            .iter()
            .find(|&&(d, _)| d == to)
            .map_or(0.0, |&(_, r)| r)
    }
}

/// Assemble jump rates for every species over the mesh.
///
/// Rates touching a voxel whose subdomain is not in the species' allowed
/// set are zero (the species cannot enter or leave such voxels by
/// diffusion). A species whose allowed set names a label the subdomain
/// map never declares is a model error.
pub fn assemble_diffusion(
    mesh: &Mesh,
    subdomains: &SubdomainMap,
    species: &[SpeciesTransport],
) -> Result<DiffusionMatrix, GeometryError> {
    if subdomains.len() != mesh.n_voxels() {
        return Err(GeometryError::Invalid(format!(
            "subdomain map covers {} voxels, mesh has {}",
            subdomains.len(),
            mesh.n_voxels()
        )));
    }
    let k = mesh.n_voxels();
    let mut out = Vec::with_capacity(species.len());
    for sp in species {
        if !(sp.diffusion_constant >= 0.0) || !sp.diffusion_constant.is_finite() {
            return Err(GeometryError::Invalid(format!(
                "species {:?} has diffusion constant {}",
                sp.name, sp.diffusion_constant
            )));
        }
        for &label in &sp.allowed_subdomains {
            if !subdomains.is_declared(label) {
                return Err(GeometryError::UndeclaredSubdomain {
                    species: sp.name.clone(),
                    label,
                });
            }
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        if sp.diffusion_constant > 0.0 {
            for e in mesh.edges() {
                let allowed = sp.allowed_subdomains.contains(&subdomains.label(e.a))
                    && sp.allowed_subdomains.contains(&subdomains.label(e.b));
                if !allowed || e.interface == 0.0 {
                    continue;
                }
                let flux = sp.diffusion_constant * e.interface / e.distance;
                rows[e.a].push((e.b, flux / mesh.volume(e.a)));
                rows[e.b].push((e.a, flux / mesh.volume(e.b)));
            }
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|&(d, _)| d);
        }
        let exit = rows
            .iter()
            .map(|row| row.iter().map(|&(_, r)| r).sum())
            .collect();
        out.push(SpeciesRates { rows, exit });
    }
    Ok(DiffusionMatrix {
        species: out,
        n_voxels: k,
    })
}
