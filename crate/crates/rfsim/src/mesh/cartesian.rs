//! Vertex-centered Cartesian grids in 1, 2 or 3 dimensions.
//!
//! Voxels sit on the grid vertices; each owns the dual cell around it, so
//! boundary voxels get half cells, edge-of-domain corners quarter cells
//! and 3-D corners eighth cells. The per-axis weights form a partition of
//! the axis length, which makes the voxel volumes sum to the exact domain
//! measure.

use super::{Edge, GeometryError, Mesh};

/// Dual-cell weight of vertex `i` on an axis of length `len` with `n`
/// vertices. A single-vertex axis owns the whole length.
fn axis_weight(i: usize, n: usize, len: f64) -> f64 {
    if n == 1 {
        len
    } else {
        let h = len / (n - 1) as f64;
        if i == 0 || i == n - 1 {
            h / 2.0
        } else {
            h
        }
    }
}

fn axis_coord(i: usize, n: usize, len: f64) -> f64 {
    if n == 1 {
        len / 2.0
    } else {
        len * i as f64 / (n - 1) as f64
    }
}

/// Build a vertex-centered grid. Voxel ids run x-fastest, then y, then z.
pub fn build_cartesian_grid(
    dim: u8,
    lengths: &[f64],
    n_per_axis: &[usize],
) -> Result<Mesh, GeometryError> {
    if !(1..=3).contains(&dim) {
        return Err(GeometryError::Invalid(format!("dim must be 1..=3, got {dim}")));
    }
    let d = dim as usize;
    if lengths.len() != d || n_per_axis.len() != d {
        return Err(GeometryError::Invalid(format!(
            "expected {d} lengths and counts, got {} and {}",
            lengths.len(),
            n_per_axis.len()
        )));
    }
    for &l in lengths {
        if !(l > 0.0) || !l.is_finite() {
            return Err(GeometryError::Invalid(format!("axis length {l} must be positive")));
        }
    }
    for &n in n_per_axis {
        if n < 1 {
            return Err(GeometryError::Invalid("axis vertex count must be >= 1".into()));
        }
    }

    let mut n = [1usize; 3];
    let mut len = [0.0f64; 3];
    n[..d].copy_from_slice(n_per_axis);
    len[..d].copy_from_slice(lengths);
    let k = n[0] * n[1] * n[2];
    let id = |ix: usize, iy: usize, iz: usize| ix + n[0] * (iy + n[1] * iz);

    let mut coords = Vec::with_capacity(k);
    let mut volumes = Vec::with_capacity(k);
    for iz in 0..n[2] {
        for iy in 0..n[1] {
            for ix in 0..n[0] {
                let idx = [ix, iy, iz];
                let mut c = [0.0; 3];
                let mut v = 1.0;
                for a in 0..d {
                    c[a] = axis_coord(idx[a], n[a], len[a]);
                    v *= axis_weight(idx[a], n[a], len[a]);
                }
                coords.push(c);
                volumes.push(v);
            }
        }
    }

    let mut edges = Vec::new();
    for iz in 0..n[2] {
        for iy in 0..n[1] {
            for ix in 0..n[0] {
                let idx = [ix, iy, iz];
                for axis in 0..d {
                    if idx[axis] + 1 >= n[axis] {
                        continue;
                    }
                    let mut jdx = idx;
                    jdx[axis] += 1;
                    let h = len[axis] / (n[axis] - 1) as f64;
                    // Interface = product of the *other* axes' weights at
                    // this vertex; those weights agree for both endpoints.
                    let mut interface = 1.0;
                    for a in 0..d {
                        if a != axis {
                            interface *= axis_weight(idx[a], n[a], len[a]);
                        }
                    }
                    edges.push(Edge {
                        a: id(idx[0], idx[1], idx[2]),
                        b: id(jdx[0], jdx[1], jdx[2]),
                        interface,
                        distance: h,
                    });
                }
            }
        }
    }

    Mesh::new(dim, coords, volumes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_half_cells_in_1d() {
        let m = build_cartesian_grid(1, &[1.0], &[2]).unwrap();
        assert_eq!(m.n_voxels(), 2);
        assert_eq!(m.volumes(), &[0.5, 0.5]);
        assert_eq!(m.edges().len(), 1);
    }

    #[test]
    fn eleven_vertices_partition_unit_interval() {
        let m = build_cartesian_grid(1, &[1.0], &[11]).unwrap();
        assert_eq!(m.n_voxels(), 11);
        assert!((m.volume(0) - 0.05).abs() < 1e-15);
        assert!((m.volume(10) - 0.05).abs() < 1e-15);
        for i in 1..10 {
            assert!((m.volume(i) - 0.1).abs() < 1e-15);
        }
        assert!((m.total_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_cube_volume_sums_exactly() {
        let m = build_cartesian_grid(3, &[1.0, 1.0, 1.0], &[5, 5, 5]).unwrap();
        assert_eq!(m.n_voxels(), 125);
        // brute-force summation against the analytic measure
        let sum: f64 = m.volumes().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
    }

    #[test]
    fn anisotropic_grid_volumes() {
        let m = build_cartesian_grid(2, &[2.0, 3.0], &[3, 4]).unwrap();
        assert_eq!(m.n_voxels(), 12);
        assert!((m.total_volume() - 6.0).abs() < 1e-12);
        // interior vertex of a 3x4 grid: full cell 1.0 * 1.0
        assert!((m.volume(1 + 3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn adjacency_is_axis_neighbors() {
        let m = build_cartesian_grid(2, &[1.0, 1.0], &[3, 3]).unwrap();
        assert!(m.are_adjacent(4, 1));
        assert!(m.are_adjacent(4, 3));
        assert!(m.are_adjacent(4, 5));
        assert!(m.are_adjacent(4, 7));
        assert!(!m.are_adjacent(0, 4)); // no diagonals
        assert_eq!(m.edges().len(), 12);
    }

    #[test]
    fn degenerate_single_vertex() {
        let m = build_cartesian_grid(1, &[2.0], &[1]).unwrap();
        assert_eq!(m.n_voxels(), 1);
        assert_eq!(m.volume(0), 2.0);
        assert!(m.edges().is_empty());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_cartesian_grid(1, &[-1.0], &[4]).is_err());
        assert!(build_cartesian_grid(1, &[0.0], &[4]).is_err());
        assert!(build_cartesian_grid(1, &[1.0], &[0]).is_err());
        assert!(build_cartesian_grid(2, &[1.0], &[4, 4]).is_err());
    }
}
