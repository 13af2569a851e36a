//! Sphere-shell mesh: an icosphere surface (membrane) over a coarse
//! interior lattice (cytosol).
//!
//! Membrane voxels are the icosphere vertices, labeled 2, with barycentric
//! dual areas and edges along the triangulation (geodesic distances,
//! circumcentric dual interface lengths). Interior voxels are Cartesian
//! lattice points strictly inside the surface, labeled 1. Each membrane
//! voxel connects to its nearest interior voxel, so the surface is always
//! reachable from the cytosol. The boundary-layer volume not covered by
//! interior cells is attributed to the membrane voxels in proportion to
//! their area, which makes the voxel volumes sum to the exact ball volume.

use std::collections::HashMap;

use super::{Edge, GeometryError, Mesh, SubdomainMap, LABEL_INTERIOR, LABEL_SURFACE};

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: V3) -> V3 {
    scale(a, 1.0 / norm(a))
}

/// Icosphere triangulation of the unit sphere.
struct Icosphere {
    verts: Vec<V3>,
    faces: Vec<[usize; 3]>,
}

fn icosphere(n_subdiv: u32) -> Icosphere {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw: [V3; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut verts: Vec<V3> = raw.iter().map(|&v| normalize(v)).collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..n_subdiv {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[e] = *midpoint.entry(key).or_insert_with(|| {
                    verts.push(normalize(scale(add(verts[a], verts[b]), 0.5)));
                    verts.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    Icosphere { verts, faces }
}

fn triangle_area(a: V3, b: V3, c: V3) -> f64 {
    norm(cross(sub(b, a), sub(c, a))) / 2.0
}

/// Circumcenter of a triangle in 3-D (barycentric formula).
fn circumcenter(a: V3, b: V3, c: V3) -> V3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ab2 = dot(ab, ab);
    let ac2 = dot(ac, ac);
    let n = cross(ab, ac);
    let n2 = dot(n, n);
    let rel = scale(
        cross(sub(scale(ac, ab2), scale(ab, ac2)), n),
        1.0 / (2.0 * n2),
    );
    add(a, rel)
}

/// Build the sphere-shell mesh; returns the mesh and its subdomain map
/// (surface voxels first, label 2; interior voxels after, label 1).
pub fn build_sphere_shell_mesh(
    radius: f64,
    n_subdiv: u32,
) -> Result<(Mesh, SubdomainMap), GeometryError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(GeometryError::Invalid(format!("radius {radius} must be positive")));
    }
    if n_subdiv > 6 {
        return Err(GeometryError::Invalid(format!(
            "n_subdiv {n_subdiv} too large (max 6)"
        )));
    }
    let ico = icosphere(n_subdiv);
    let n_surf = ico.verts.len();
    let surf_coords: Vec<V3> = ico.verts.iter().map(|&v| scale(v, radius)).collect();

    // Barycentric vertex areas from the flat triangulation.
    let mut areas = vec![0.0f64; n_surf];
    for f in &ico.faces {
        let ar = triangle_area(surf_coords[f[0]], surf_coords[f[1]], surf_coords[f[2]]);
        for &v in f {
            areas[v] += ar / 3.0;
        }
    }

    // Surface edges: geodesic arc distance, circumcentric dual interface.
    let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (fi, f) in ico.faces.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    let mut edges = Vec::new();
    let mut chord_sum = 0.0;
    for (&(a, b), fs) in &edge_faces {
        let ua = normalize(surf_coords[a]);
        let ub = normalize(surf_coords[b]);
        let geodesic = radius * dot(ua, ub).clamp(-1.0, 1.0).acos();
        let midpoint = scale(add(surf_coords[a], surf_coords[b]), 0.5);
        let mut dual_len = 0.0;
        for &fi in fs {
            let f = ico.faces[fi];
            let cc = circumcenter(surf_coords[f[0]], surf_coords[f[1]], surf_coords[f[2]]);
            dual_len += norm(sub(cc, midpoint));
        }
        chord_sum += norm(sub(surf_coords[a], surf_coords[b]));
        edges.push(Edge {
            a,
            b,
            interface: dual_len,
            distance: geodesic,
        });
    }
    let mean_chord = chord_sum / edge_faces.len() as f64;

    // Interior lattice at the surface spacing, kept strictly inside.
    let h = mean_chord;
    let keep_radius = radius - 0.5 * h;
    let mut interior: Vec<V3> = Vec::new();
    let mut index_of: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let reach = (keep_radius / h).floor() as i64;
    for iz in -reach..=reach {
        for iy in -reach..=reach {
            for ix in -reach..=reach {
                let p = [ix as f64 * h, iy as f64 * h, iz as f64 * h];
                if norm(p) <= keep_radius {
                    index_of.insert((ix, iy, iz), n_surf + interior.len());
                    interior.push(p);
                }
            }
        }
    }
    if interior.is_empty() {
        // Shell too coarse for any lattice point: fall back to the center.
        index_of.insert((0, 0, 0), n_surf);
        interior.push([0.0, 0.0, 0.0]);
    }

    for (&(ix, iy, iz), &i) in &index_of {
        for (dx, dy, dz) in [(1i64, 0i64, 0i64), (0, 1, 0), (0, 0, 1)] {
            if let Some(&j) = index_of.get(&(ix + dx, iy + dy, iz + dz)) {
                edges.push(Edge {
                    a: i,
                    b: j,
                    interface: h * h,
                    distance: h,
                });
            }
        }
    }

    // Tie every membrane voxel to its nearest interior voxel.
    for (s, &sc) in surf_coords.iter().enumerate() {
        let (best, dist) = interior
            .iter()
            .enumerate()
            .map(|(i, &p)| (i, norm(sub(sc, p))))
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        edges.push(Edge {
            a: s,
            b: n_surf + best,
            interface: areas[s],
            distance: dist,
        });
    }

    // Volumes: interior cells h^3; the remaining boundary-layer volume is
    // shared among membrane voxels in proportion to area, so the total is
    // the exact ball volume.
    let ball = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
    let v_int = h * h * h;
    let interior_total = v_int * interior.len() as f64;
    let area_total: f64 = areas.iter().sum();
    let thickness = (ball - interior_total) / area_total;
    if !(thickness > 0.0) {
        return Err(GeometryError::Invalid(
            "interior lattice overfills the sphere".into(),
        ));
    }

    let mut coords = surf_coords;
    coords.extend(interior.iter().copied());
    let mut volumes: Vec<f64> = areas.iter().map(|&a| a * thickness).collect();
    volumes.extend(std::iter::repeat(v_int).take(interior.len()));

    let mut labels = vec![LABEL_SURFACE; n_surf];
    labels.extend(std::iter::repeat(LABEL_INTERIOR).take(interior.len()));

    let mesh = Mesh::new(3, coords, volumes, edges)?;
    connect_components(mesh, SubdomainMap::new(labels))
}

/// If the lattice left any disconnected voxel islands, bridge each to the
/// main component through its nearest voxel there.
fn connect_components(
    mesh: Mesh,
    subs: SubdomainMap,
) -> Result<(Mesh, SubdomainMap), GeometryError> {
    let k = mesh.n_voxels();
    let mut comp = vec![usize::MAX; k];
    let mut n_comp = 0;
    for start in 0..k {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = n_comp;
        while let Some(v) = stack.pop() {
            for &(n, _) in mesh.neighbors(v) {
                if comp[n] == usize::MAX {
                    comp[n] = n_comp;
                    stack.push(n);
                }
            }
        }
        n_comp += 1;
    }
    if n_comp <= 1 {
        return Ok((mesh, subs));
    }
    let mut counts = vec![0usize; n_comp];
    for &c in &comp {
        counts[c] += 1;
    }
    let main = counts
        .iter()
        .enumerate()
        .max_by_key(|&(_, &c)| c)
        .map(|(i, _)| i)
        .unwrap();
    let mut edges: Vec<Edge> = mesh.edges().to_vec();
    for c in 0..n_comp {
        if c == main {
            continue;
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for a in (0..k).filter(|&v| comp[v] == c) {
            for b in (0..k).filter(|&v| comp[v] == main) {
                let d = norm(sub(mesh.coords(a), mesh.coords(b)));
                if best.map_or(true, |(_, _, bd)| d < bd) {
                    best = Some((a, b, d));
                }
            }
        }
        let (a, b, d) = best.unwrap();
        let iface = (mesh.volume(a).min(mesh.volume(b))).powf(2.0 / 3.0);
        edges.push(Edge {
            a,
            b,
            interface: iface,
            distance: d,
        });
    }
    let coords = (0..k).map(|v| mesh.coords(v)).collect();
    let volumes = mesh.volumes().to_vec();
    let mesh = Mesh::new(mesh.dim(), coords, volumes, edges)?;
    Ok((mesh, subs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subdiv0_has_twelve_membrane_voxels() {
        let (mesh, subs) = build_sphere_shell_mesh(1.0, 0).unwrap();
        let membrane = subs.voxels_with(LABEL_SURFACE);
        assert_eq!(membrane.len(), 12);
        for v in membrane {
            assert_eq!(subs.label(v), LABEL_SURFACE);
        }
        assert!(mesh.n_voxels() > 12); // at least one interior voxel
    }

    #[test]
    fn membrane_voxels_sit_on_the_sphere() {
        for subdiv in [0, 1, 2] {
            let (mesh, subs) = build_sphere_shell_mesh(1.0, subdiv).unwrap();
            for v in subs.voxels_with(LABEL_SURFACE) {
                let r = norm(mesh.coords(v));
                assert!((r - 1.0).abs() < 1e-9, "subdiv {subdiv} voxel {v} at r={r}");
            }
        }
    }

    #[test]
    fn total_volume_matches_ball() {
        // brute-force volume summation against the analytic ball volume
        let (mesh, _) = build_sphere_shell_mesh(1.0, 3).unwrap();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI;
        let sum = mesh.total_volume();
        assert!(
            (sum - analytic).abs() / analytic < 0.05,
            "sum {sum} vs {analytic}"
        );
    }

    #[test]
    fn every_membrane_voxel_has_an_interior_neighbor() {
        for subdiv in [0, 1, 2, 3] {
            let (mesh, subs) = build_sphere_shell_mesh(2.5, subdiv).unwrap();
            for v in subs.voxels_with(LABEL_SURFACE) {
                let has_interior = mesh
                    .neighbors(v)
                    .iter()
                    .any(|&(n, _)| subs.label(n) == LABEL_INTERIOR);
                assert!(has_interior, "subdiv {subdiv} membrane voxel {v} is isolated");
            }
        }
    }

    #[test]
    fn icosphere_counts() {
        for (s, nv) in [(0u32, 12usize), (1, 42), (2, 162), (3, 642)] {
            let ico = icosphere(s);
            assert_eq!(ico.verts.len(), nv);
            assert_eq!(ico.faces.len(), 20usize * 4usize.pow(s));
        }
    }

    #[test]
    fn mesh_is_connected() {
        let (mesh, _) = build_sphere_shell_mesh(1.0, 2).unwrap();
        let k = mesh.n_voxels();
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(n, _) in mesh.neighbors(v) {
                if !seen[n] {
                    seen[n] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
        assert_eq!(count, k);
    }

    #[test]
    fn rejects_bad_radius() {
        assert!(build_sphere_shell_mesh(0.0, 1).is_err());
        assert!(build_sphere_shell_mesh(-2.0, 1).is_err());
    }
}
