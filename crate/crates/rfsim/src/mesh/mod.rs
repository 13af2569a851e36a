//! Spatial discretizations: voxel meshes, subdomain labels, and the
//! per-species diffusion jump-rate matrices assembled from them.
//!
//! A mesh is a set of voxels (points with dual volumes) plus undirected
//! edges carrying the geometry needed for finite-volume jump rates: the
//! shared interface measure and the center distance. Meshes are immutable
//! once built and safe to share across concurrently running realizations.

use std::collections::BTreeSet;

use thiserror::Error;

mod cartesian;
mod diffusion;
pub(crate) mod io;
mod sphere;

pub use cartesian::build_cartesian_grid;
pub use diffusion::{assemble_diffusion, DiffusionMatrix, SpeciesTransport};
pub use io::{read_mesh, read_mesh_str, write_mesh, write_mesh_string};
pub use sphere::build_sphere_shell_mesh;

/// Conventional label for bulk/interior voxels.
pub const LABEL_INTERIOR: u32 = 1;
/// Conventional label for surface/membrane voxels.
pub const LABEL_SURFACE: u32 = 2;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    Invalid(String),
    #[error("mesh parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("species {species:?} references undeclared subdomain label {label}")]
    UndeclaredSubdomain { species: String, label: u32 },
    #[error("mesh i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Undirected mesh edge with the geometry used for jump rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Shared interface measure between the two dual cells.
    pub interface: f64,
    /// Distance between the voxel centers (geodesic on surfaces).
    pub distance: f64,
}

/// Voxelized domain: vertex-centered dual cells with adjacency.
#[derive(Clone, Debug)]
pub struct Mesh {
    dim: u8,
    coords: Vec<[f64; 3]>,
    volumes: Vec<f64>,
    edges: Vec<Edge>,
    /// Per voxel: (neighbor voxel, index into `edges`).
    neighbors: Vec<Vec<(usize, usize)>>,
}

impl Mesh {
    /// Validate and build a mesh. Edges are canonicalized to undirected
    /// form; a duplicate of an existing edge is accepted only if its
    /// geometry matches exactly.
    pub fn new(
        dim: u8,
        coords: Vec<[f64; 3]>,
        volumes: Vec<f64>,
        edges: Vec<Edge>,
    ) -> Result<Self, GeometryError> {
        if !(1..=3).contains(&dim) {
            return Err(GeometryError::Invalid(format!("dim must be 1..=3, got {dim}")));
        }
        if coords.len() != volumes.len() {
            return Err(GeometryError::Invalid(format!(
                "{} coordinates but {} volumes",
                coords.len(),
                volumes.len()
            )));
        }
        let k = coords.len();
        for (i, &v) in volumes.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(GeometryError::Invalid(format!(
                    "voxel {i} has non-positive volume {v}"
                )));
            }
        }
        let mut canonical: Vec<Edge> = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashMap::new();
        for e in &edges {
            if e.a == e.b {
                return Err(GeometryError::Invalid(format!("self-edge on voxel {}", e.a)));
            }
            if e.a >= k || e.b >= k {
                return Err(GeometryError::Invalid(format!(
                    "edge ({}, {}) references a voxel outside 0..{k}",
                    e.a, e.b
                )));
            }
            if !(e.distance > 0.0) || !(e.interface >= 0.0) {
                return Err(GeometryError::Invalid(format!(
                    "edge ({}, {}) has interface {} and distance {}",
                    e.a, e.b, e.interface, e.distance
                )));
            }
            let key = (e.a.min(e.b), e.a.max(e.b));
            match seen.get(&key) {
                None => {
                    seen.insert(key, canonical.len());
                    canonical.push(Edge {
                        a: key.0,
                        b: key.1,
                        interface: e.interface,
                        distance: e.distance,
                    });
                }
                Some(&idx) => {
                    let prev: Edge = canonical[idx];
                    if prev.interface != e.interface || prev.distance != e.distance {
                        return Err(GeometryError::Invalid(format!(
                            "edge ({}, {}) appears twice with conflicting geometry",
                            e.a, e.b
                        )));
                    }
                }
            }
        }
        let mut neighbors = vec![Vec::new(); k];
        for (idx, e) in canonical.iter().enumerate() {
            neighbors[e.a].push((e.b, idx));
            neighbors[e.b].push((e.a, idx));
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Mesh {
            dim,
            coords,
            volumes,
            edges: canonical,
            neighbors,
        })
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }

    /// Number of voxels K.
    pub fn n_voxels(&self) -> usize {
        self.volumes.len()
    }

    pub fn coords(&self, voxel: usize) -> [f64; 3] {
        self.coords[voxel]
    }

    pub fn volume(&self, voxel: usize) -> f64 {
        self.volumes[voxel]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbors of a voxel as (neighbor, edge index) pairs, sorted.
    pub fn neighbors(&self, voxel: usize) -> &[(usize, usize)] {
        &self.neighbors[voxel]
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].iter().any(|&(n, _)| n == b)
    }
}

/// One small-integer subdomain label per voxel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubdomainMap {
    labels: Vec<u32>,
    declared: BTreeSet<u32>,
}

impl SubdomainMap {
    pub fn new(labels: Vec<u32>) -> Self {
        let declared = labels.iter().copied().collect();
        SubdomainMap { labels, declared }
    }

    /// All voxels carry the same label.
    pub fn uniform(n_voxels: usize, label: u32) -> Self {
        SubdomainMap::new(vec![label; n_voxels])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, voxel: usize) -> u32 {
        self.labels[voxel]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// The finite, declared label set (sorted).
    pub fn declared_labels(&self) -> &BTreeSet<u32> {
        &self.declared
    }

    pub fn is_declared(&self, label: u32) -> bool {
        self.declared.contains(&label)
    }

    pub fn voxels_with(&self, label: u32) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_edge(a: usize, b: usize) -> Edge {
        Edge {
            a,
            b,
            interface: 1.0,
            distance: 1.0,
        }
    }

    #[test]
    fn rejects_zero_volume() {
        let err = Mesh::new(1, vec![[0.0; 3], [1.0; 3]], vec![1.0, 0.0], vec![]);
        assert!(matches!(err, Err(GeometryError::Invalid(_))));
    }

    #[test]
    fn canonicalizes_duplicate_edges() {
        let m = Mesh::new(
            1,
            vec![[0.0; 3], [1.0; 3]],
            vec![0.5, 0.5],
            vec![unit_edge(0, 1), unit_edge(1, 0)],
        )
        .unwrap();
        assert_eq!(m.edges().len(), 1);
        assert!(m.are_adjacent(0, 1));
        assert!(m.are_adjacent(1, 0));
    }

    #[test]
    fn conflicting_duplicate_is_an_error() {
        let e1 = unit_edge(0, 1);
        let e2 = Edge {
            a: 1,
            b: 0,
            interface: 2.0,
            distance: 1.0,
        };
        let err = Mesh::new(1, vec![[0.0; 3], [1.0; 3]], vec![0.5, 0.5], vec![e1, e2]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_self_edge() {
        let err = Mesh::new(1, vec![[0.0; 3]], vec![1.0], vec![unit_edge(0, 0)]);
        assert!(err.is_err());
    }

    #[test]
    fn subdomain_map_declares_present_labels() {
        let s = SubdomainMap::new(vec![1, 2, 1]);
        assert!(s.is_declared(1) && s.is_declared(2) && !s.is_declared(3));
        assert_eq!(s.voxels_with(1), vec![0, 2]);
    }
}
