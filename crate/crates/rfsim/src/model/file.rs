//! Declarative model file format.
//!
//! Sections `[mesh] [species] [parameters] [reactions] [initial] [tspan]`,
//! one record per line, `#` comments. The exact grammar ships as EBNF in
//! `docs/model-format.md`. Parsing and serialization round-trip: a
//! reparsed model has the same diagnostics, propensity evaluations and
//! diffusion assembly as the original.

use std::collections::BTreeMap;
use std::path::Path;

use crate::expr::parse_propensity;
use crate::mesh::io::fmt_f64;
use crate::mesh::{build_cartesian_grid, build_sphere_shell_mesh, read_mesh, SubdomainMap};

use super::{
    linspace, InitialDirective, MeshSource, ModelError, ModelSpec, Parameter, Propensity,
    RateConstant, Reaction, Species,
};

pub fn parse_model(path: &Path) -> Result<ModelSpec, ModelError> {
    let text = std::fs::read_to_string(path)?;
    parse_model_str(&text, path.parent())
}

/// Parse model text; `base_dir` resolves relative `file` mesh paths.
pub fn parse_model_str(text: &str, base_dir: Option<&Path>) -> Result<ModelSpec, ModelError> {
    let mut mesh_line: Option<(usize, String)> = None;
    let mut species: Vec<Species> = Vec::new();
    let mut parameters: Vec<Parameter> = Vec::new();
    let mut reactions: Vec<Reaction> = Vec::new();
    let mut initial: Vec<InitialDirective> = Vec::new();
    let mut tspan: Vec<f64> = Vec::new();

    #[derive(PartialEq, Clone, Copy)]
    enum Section {
        None,
        Mesh,
        Species,
        Parameters,
        Reactions,
        Initial,
        Tspan,
    }
    let mut section = Section::None;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ModelError::Parse { line: lineno, msg };
        if line.starts_with('[') {
            section = match line {
                "[mesh]" => Section::Mesh,
                "[species]" => Section::Species,
                "[parameters]" => Section::Parameters,
                "[reactions]" => Section::Reactions,
                "[initial]" => Section::Initial,
                "[tspan]" => Section::Tspan,
                other => return Err(err(format!("unknown section {other}"))),
            };
            continue;
        }
        match section {
            Section::None => return Err(err("content before the first section header".into())),
            Section::Mesh => {
                if mesh_line.is_some() {
                    return Err(err("mesh specified twice".into()));
                }
                mesh_line = Some((lineno, line.to_string()));
            }
            Section::Species => {
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(err(format!(
                        "species line needs `name D subdomains`, got {} fields",
                        f.len()
                    )));
                }
                species.push(Species {
                    name: f[0].to_string(),
                    diffusion_constant: parse_num(f[1], lineno, "diffusion constant")?,
                    allowed_subdomains: parse_labels(f[2], lineno)?,
                });
            }
            Section::Parameters => {
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 2 {
                    return Err(err(format!(
                        "parameter line needs `name value`, got {} fields",
                        f.len()
                    )));
                }
                parameters.push(Parameter {
                    name: f[0].to_string(),
                    value: parse_num(f[1], lineno, "parameter value")?,
                });
            }
            Section::Reactions => reactions.push(parse_reaction(line, lineno)?),
            Section::Initial => {
                let f: Vec<&str> = line.split_whitespace().collect();
                match f.first().copied() {
                    Some("scatter") if f.len() == 4 => initial.push(InitialDirective::Scatter {
                        species: f[1].to_string(),
                        count: parse_num_u64(f[2], lineno)?,
                        subdomain: f[3].parse().map_err(|_| {
                            ModelError::Parse {
                                line: lineno,
                                msg: format!("bad subdomain label {:?}", f[3]),
                            }
                        })?,
                    }),
                    Some("set") if f.len() == 4 => initial.push(InitialDirective::Set {
                        species: f[1].to_string(),
                        voxel: f[2].parse().map_err(|_| ModelError::Parse {
                            line: lineno,
                            msg: format!("bad voxel id {:?}", f[2]),
                        })?,
                        count: parse_num_u64(f[3], lineno)?,
                    }),
                    _ => {
                        return Err(err(
                            "initial line must be `scatter species count subdomain` or `set species voxel count`"
                                .into(),
                        ))
                    }
                }
            }
            Section::Tspan => {
                if !tspan.is_empty() {
                    return Err(err("tspan specified twice".into()));
                }
                let f: Vec<&str> = line.split_whitespace().collect();
                match f.first().copied() {
                    Some("linspace") if f.len() == 4 => {
                        let t0 = parse_num(f[1], lineno, "tspan start")?;
                        let t1 = parse_num(f[2], lineno, "tspan end")?;
                        let n: usize = f[3].parse().map_err(|_| ModelError::Parse {
                            line: lineno,
                            msg: format!("bad point count {:?}", f[3]),
                        })?;
                        tspan = linspace(t0, t1, n);
                    }
                    Some("list") if f.len() >= 2 => {
                        tspan = f[1..]
                            .iter()
                            .map(|s| parse_num(s, lineno, "tspan value"))
                            .collect::<Result<_, _>>()?;
                    }
                    _ => {
                        return Err(err(
                            "tspan line must be `linspace t0 t1 n` or `list t...`".into(),
                        ))
                    }
                }
            }
        }
    }

    let (mesh_lineno, mesh_spec) = mesh_line.ok_or(ModelError::Parse {
        line: 0,
        msg: "missing [mesh] section".into(),
    })?;
    let (mesh_source, mesh, subdomains) = build_mesh(&mesh_spec, mesh_lineno, base_dir)?;

    let mut model = ModelSpec::new(mesh_source, mesh, subdomains);
    model.species = species;
    model.parameters = parameters;
    model.reactions = reactions;
    model.initial = initial;
    model.tspan = tspan;
    Ok(model)
}

fn build_mesh(
    spec: &str,
    lineno: usize,
    base_dir: Option<&Path>,
) -> Result<(MeshSource, crate::mesh::Mesh, SubdomainMap), ModelError> {
    let f: Vec<&str> = spec.split_whitespace().collect();
    let err = |msg: String| ModelError::Parse { line: lineno, msg };
    match f.first().copied() {
        Some("builtin") if f.get(1) == Some(&"grid") && f.len() == 5 => {
            let dim: u8 = f[2]
                .parse()
                .map_err(|_| err(format!("bad grid dim {:?}", f[2])))?;
            let lengths: Vec<f64> = f[3]
                .split(',')
                .map(|s| parse_num(s, lineno, "grid length"))
                .collect::<Result<_, _>>()?;
            let counts: Vec<usize> = f[4]
                .split(',')
                .map(|s| {
                    s.parse()
                        .map_err(|_| err(format!("bad grid count {s:?}")))
                })
                .collect::<Result<_, _>>()?;
            let mesh = build_cartesian_grid(dim, &lengths, &counts)?;
            let subs = SubdomainMap::uniform(mesh.n_voxels(), 1);
            Ok((MeshSource::Grid { dim, lengths, counts }, mesh, subs))
        }
        Some("builtin") if f.get(1) == Some(&"sphere") && f.len() == 4 => {
            let radius = parse_num(f[2], lineno, "sphere radius")?;
            let subdiv: u32 = f[3]
                .parse()
                .map_err(|_| err(format!("bad subdivision count {:?}", f[3])))?;
            let (mesh, subs) = build_sphere_shell_mesh(radius, subdiv)?;
            Ok((MeshSource::Sphere { radius, subdiv }, mesh, subs))
        }
        Some("file") if f.len() == 2 => {
            let path = match base_dir {
                Some(dir) => dir.join(f[1]),
                None => Path::new(f[1]).to_path_buf(),
            };
            let (mesh, subs) = read_mesh(&path)?;
            Ok((MeshSource::File(f[1].to_string()), mesh, subs))
        }
        _ => Err(err(format!("unrecognized mesh specification {spec:?}"))),
    }
}

fn parse_reaction(line: &str, lineno: usize) -> Result<Reaction, ModelError> {
    let err = |msg: String| ModelError::Parse { line: lineno, msg };
    let (name, rest) = line
        .split_once(':')
        .ok_or_else(|| err("reaction line needs `name: ...`".into()))?;
    let (lhs, rest) = rest
        .split_once("->")
        .ok_or_else(|| err("reaction needs `reactants -> products`".into()))?;
    let (rhs, rate_part) = rest
        .split_once('@')
        .ok_or_else(|| err("reaction needs `@ massaction(...)` or `@ expr(\"...\")`".into()))?;

    let reactants = parse_side(lhs, lineno)?;
    let products = parse_side(rhs, lineno)?;

    let rate_part = rate_part.trim();
    let (propensity, tail) = if let Some(inner) = rate_part.strip_prefix("massaction(") {
        let close = inner
            .find(')')
            .ok_or_else(|| err("unterminated massaction(...)".into()))?;
        let arg = inner[..close].trim();
        let rc = match arg.parse::<f64>() {
            Ok(v) => RateConstant::Value(v),
            Err(_) => RateConstant::Param(arg.to_string()),
        };
        (Propensity::MassAction(rc), &inner[close + 1..])
    } else if let Some(inner) = rate_part.strip_prefix("expr(\"") {
        let close = inner
            .find('"')
            .ok_or_else(|| err("unterminated expr(\"...\")".into()))?;
        let source = &inner[..close];
        let expr = parse_propensity(source)
            .map_err(|e| err(format!("propensity expression: {e}")))?;
        let after = inner[close + 1..]
            .strip_prefix(')')
            .ok_or_else(|| err("expected `)` after expr(\"...\")".into()))?;
        (Propensity::Custom(expr), after)
    } else {
        return Err(err(format!("unrecognized rate {rate_part:?}")));
    };

    let tail = tail.trim();
    let restrict_to = if tail.is_empty() {
        None
    } else if let Some(labels) = tail.strip_prefix("in ") {
        Some(parse_labels(labels.trim(), lineno)?)
    } else {
        return Err(err(format!("unexpected trailing {tail:?}")));
    };

    Ok(Reaction {
        name: name.trim().to_string(),
        reactants,
        products,
        propensity,
        restrict_to,
    })
}

fn parse_side(side: &str, lineno: usize) -> Result<BTreeMap<String, u32>, ModelError> {
    let side = side.trim();
    let mut out = BTreeMap::new();
    if side == "0" || side.is_empty() {
        return Ok(out);
    }
    for term in side.split('+') {
        let f: Vec<&str> = term.split_whitespace().collect();
        let (count, name) = match f.len() {
            1 => (1u32, f[0]),
            2 => (
                f[0].parse().map_err(|_| ModelError::Parse {
                    line: lineno,
                    msg: format!("bad stoichiometric count {:?}", f[0]),
                })?,
                f[1],
            ),
            _ => {
                return Err(ModelError::Parse {
                    line: lineno,
                    msg: format!("cannot parse reaction term {term:?}"),
                })
            }
        };
        *out.entry(name.to_string()).or_insert(0) += count;
    }
    Ok(out)
}

fn parse_labels(
    text: &str,
    lineno: usize,
) -> Result<std::collections::BTreeSet<u32>, ModelError> {
    text.split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| ModelError::Parse {
                line: lineno,
                msg: format!("bad subdomain label {s:?}"),
            })
        })
        .collect()
}

fn parse_num(s: &str, line: usize, what: &str) -> Result<f64, ModelError> {
    s.parse().map_err(|_| ModelError::Parse {
        line,
        msg: format!("cannot parse {what} from {s:?}"),
    })
}

fn parse_num_u64(s: &str, line: usize) -> Result<u64, ModelError> {
    s.parse().map_err(|_| ModelError::Parse {
        line,
        msg: format!("cannot parse count from {s:?}"),
    })
}

/// Canonical text form; stable for a given in-memory model, which makes
/// it usable as hash input.
pub fn write_model_string(model: &ModelSpec) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    out.push_str("[mesh]\n");
    match &model.mesh_source {
        MeshSource::Grid { dim, lengths, counts } => {
            let ls: Vec<String> = lengths.iter().map(|&l| fmt_f64(l)).collect();
            let cs: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
            writeln!(out, "builtin grid {dim} {} {}", ls.join(","), cs.join(",")).unwrap();
        }
        MeshSource::Sphere { radius, subdiv } => {
            writeln!(out, "builtin sphere {} {subdiv}", fmt_f64(*radius)).unwrap();
        }
        MeshSource::File(path) => writeln!(out, "file {path}").unwrap(),
    }
    out.push_str("\n[species]\n");
    for s in &model.species {
        let labels: Vec<String> = s.allowed_subdomains.iter().map(|l| l.to_string()).collect();
        writeln!(
            out,
            "{} {} {}",
            s.name,
            fmt_f64(s.diffusion_constant),
            labels.join(",")
        )
        .unwrap();
    }
    out.push_str("\n[parameters]\n");
    for p in &model.parameters {
        writeln!(out, "{} {}", p.name, fmt_f64(p.value)).unwrap();
    }
    out.push_str("\n[reactions]\n");
    for r in &model.reactions {
        let side = |m: &BTreeMap<String, u32>| {
            if m.is_empty() {
                "0".to_string()
            } else {
                m.iter()
                    .map(|(n, &c)| if c == 1 { n.clone() } else { format!("{c} {n}") })
                    .collect::<Vec<_>>()
                    .join(" + ")
            }
        };
        let rate = match &r.propensity {
            Propensity::MassAction(RateConstant::Param(p)) => format!("massaction({p})"),
            Propensity::MassAction(RateConstant::Value(v)) => {
                format!("massaction({})", fmt_f64(*v))
            }
            Propensity::Custom(e) => format!("expr(\"{e}\")"),
        };
        write!(
            out,
            "{}: {} -> {} @ {}",
            r.name,
            side(&r.reactants),
            side(&r.products),
            rate
        )
        .unwrap();
        if let Some(labels) = &r.restrict_to {
            let ls: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
            write!(out, " in {}", ls.join(",")).unwrap();
        }
        out.push('\n');
    }
    out.push_str("\n[initial]\n");
    for d in &model.initial {
        match d {
            InitialDirective::Scatter { species, count, subdomain } => {
                writeln!(out, "scatter {species} {count} {subdomain}").unwrap();
            }
            InitialDirective::Set { species, voxel, count } => {
                writeln!(out, "set {species} {voxel} {count}").unwrap();
            }
        }
    }
    out.push_str("\n[tspan]\n");
    let ts: Vec<String> = model.tspan.iter().map(|&t| fmt_f64(t)).collect();
    writeln!(out, "list {}", ts.join(" ")).unwrap();
    out
}
