//! Line-oriented ASCII mesh exchange format.
//!
//! ```text
//! RFMESH 1 <dim> <K> <E>
//! v <id> <x> [y] [z] <volume> [<subdomain_label>]
//! e <i> <j> <interface_area> <distance>
//! ```
//!
//! Ids are 0-based contiguous integers; `#` starts a comment; voxels
//! without a label default to 1. Edges are undirected and may appear in
//! either orientation.

use std::path::Path;

use super::{Edge, GeometryError, Mesh, SubdomainMap, LABEL_INTERIOR};

pub fn read_mesh(path: &Path) -> Result<(Mesh, SubdomainMap), GeometryError> {
    let text = std::fs::read_to_string(path)?;
    read_mesh_str(&text)
}

pub fn read_mesh_str(text: &str) -> Result<(Mesh, SubdomainMap), GeometryError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| GeometryError::Parse { line: 1, msg: "empty mesh file".into() })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad_header = |msg: &str| GeometryError::Parse { line: hline, msg: msg.into() };
    if fields.len() != 5 || fields[0] != "RFMESH" {
        return Err(bad_header("expected header `RFMESH 1 <dim> <K> <E>`"));
    }
    if fields[1] != "1" {
        return Err(bad_header(&format!("unsupported format version {}", fields[1])));
    }
    let dim: u8 = parse_field(fields[2], hline, "dim")?;
    let k: usize = parse_field(fields[3], hline, "voxel count")?;
    let n_edges: usize = parse_field(fields[4], hline, "edge count")?;
    if !(1..=3).contains(&dim) {
        return Err(bad_header(&format!("dim must be 1..=3, got {dim}")));
    }

    let mut coords = vec![None::<[f64; 3]>; k];
    let mut volumes = vec![0.0f64; k];
    let mut labels = vec![LABEL_INTERIOR; k];
    let mut edges = Vec::with_capacity(n_edges);

    for (lineno, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str, what: &str| parse_field::<f64>(s, lineno, what);
        match f[0] {
            "v" => {
                let d = dim as usize;
                // id + coords + volume, label optional
                if f.len() != 2 + d + 1 && f.len() != 3 + d + 1 {
                    return Err(GeometryError::Parse {
                        line: lineno,
                        msg: format!("voxel line has {} fields, expected {} or {}", f.len(), 3 + d, 4 + d),
                    });
                }
                let id: usize = parse_field(f[1], lineno, "voxel id")?;
                if id >= k {
                    return Err(GeometryError::Parse {
                        line: lineno,
                        msg: format!("voxel id {id} out of range 0..{k}"),
                    });
                }
                if coords[id].is_some() {
                    return Err(GeometryError::Parse {
                        line: lineno,
                        msg: format!("voxel {id} defined twice"),
                    });
                }
                let mut c = [0.0f64; 3];
                for (a, slot) in c.iter_mut().take(d).enumerate() {
                    *slot = parse(f[2 + a], "coordinate")?;
                }
                volumes[id] = parse(f[2 + d], "volume")?;
                if f.len() == 3 + d + 1 {
                    labels[id] = parse_field(f[3 + d], lineno, "subdomain label")?;
                }
                coords[id] = Some(c);
            }
            "e" => {
                if f.len() != 5 {
                    return Err(GeometryError::Parse {
                        line: lineno,
                        msg: format!("edge line has {} fields, expected 5", f.len()),
                    });
                }
                edges.push(Edge {
                    a: parse_field(f[1], lineno, "edge endpoint")?,
                    b: parse_field(f[2], lineno, "edge endpoint")?,
                    interface: parse(f[3], "interface area")?,
                    distance: parse(f[4], "distance")?,
                });
            }
            other => {
                return Err(GeometryError::Parse {
                    line: lineno,
                    msg: format!("unknown record type {other:?}"),
                });
            }
        }
    }

    let coords: Vec<[f64; 3]> = coords
        .into_iter()
        .enumerate()
        .map(|(id, c)| {
            c.ok_or_else(|| GeometryError::Parse {
                line: 0,
                msg: format!("voxel {id} missing from file"),
            })
        })
        .collect::<Result<_, _>>()?;

    let mesh = Mesh::new(dim, coords, volumes, edges)?;
    Ok((mesh, SubdomainMap::new(labels)))
}

pub fn write_mesh(mesh: &Mesh, subs: &SubdomainMap, path: &Path) -> Result<(), GeometryError> {
    std::fs::write(path, write_mesh_string(mesh, subs))?;
    Ok(())
}

pub fn write_mesh_string(mesh: &Mesh, subs: &SubdomainMap) -> String {
    use std::fmt::Write;
    let d = mesh.dim() as usize;
    let mut out = String::new();
    writeln!(
        out,
        "RFMESH 1 {} {} {}",
        mesh.dim(),
        mesh.n_voxels(),
        mesh.edges().len()
    )
    .unwrap();
    for i in 0..mesh.n_voxels() {
        let c = mesh.coords(i);
        write!(out, "v {i}").unwrap();
        for coord in c.iter().take(d) {
            write!(out, " {}", fmt_f64(*coord)).unwrap();
        }
        writeln!(out, " {} {}", fmt_f64(mesh.volume(i)), subs.label(i)).unwrap();
    }
    for e in mesh.edges() {
        writeln!(
            out,
            "e {} {} {} {}",
            e.a,
            e.b,
            fmt_f64(e.interface),
            fmt_f64(e.distance)
        )
        .unwrap();
    }
    out
}

/// Shortest round-trippable decimal form.
pub(crate) fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T, GeometryError> {
    s.parse().map_err(|_| GeometryError::Parse {
        line,
        msg: format!("cannot parse {what} from {s:?}"),
    })
}
