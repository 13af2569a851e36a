//! Thin command-line front end over the `rfsim` library.
//!
//! Exit codes: 0 success, 1 user error (bad arguments, invalid model,
//! missing inputs), 2 runtime error (solver or storage failure mid-run).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rfsim::bench::{bench_strong, bench_weak, bench_workload_model, BENCH_POST_SPEC};
use rfsim::ensemble::{
    add_realizations, map_aggregate, run_ensemble_nostorage, run_parameter_sweep, EngineError,
    EnsembleHandle, Registry, StorageMode, SweepSpec,
};
use rfsim::model::{parse_model, ModelSpec};
use rfsim::polarization::{build_yeast_model, run_switch_sweep, YeastParams};
use rfsim::solver::{run_direct_ssa_with, run_nsm_with, SolverOptions};
use rfsim::storage::{
    object_store_client, S3Config, SharedStorage, StorageBackend, StorageKey, StorageSettings,
};
use rfsim::trajectory::{read_trajectory_file, write_trajectory_file};

#[derive(Parser)]
#[command(
    name = "rfsim",
    about = "Spatial stochastic reaction-diffusion simulation and ensemble workflows",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker count for parallel sections.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Storage tier: none, shared, persistent.
    #[arg(long, default_value = "none")]
    storage: String,
    /// Output directory.
    #[arg(long, default_value = "rfsim-out")]
    out: PathBuf,
    /// TOML config file with a [storage] section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for --storage shared (overrides RF_SHARED_DIR).
    #[arg(long)]
    shared_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and print diagnostics.
    Validate {
        /// Model file path, or `preset:yeast-polarization`.
        #[arg(long)]
        model: String,
    },
    /// Sample one realization and write a trajectory file.
    Run {
        #[arg(long)]
        model: String,
        /// Sampler: nsm or direct-ssa.
        #[arg(long, default_value = "nsm")]
        solver: String,
        /// Event safety cap.
        #[arg(long)]
        max_events: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate an ensemble (workflow B with --storage none, C otherwise).
    Ensemble {
        #[arg(long)]
        model: String,
        /// Number of realizations.
        #[arg(long)]
        n: usize,
        /// Post-processor spec, e.g. final-count:A (required for
        /// --storage none; optional aggregation otherwise).
        #[arg(long)]
        g: Option<String>,
        /// Ensemble id (storage namespace).
        #[arg(long, default_value = "ensemble")]
        id: String,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate a stored ensemble with a post-processor (workflow D).
    Postprocess {
        #[arg(long)]
        model: String,
        /// Ensemble id written by `ensemble`.
        #[arg(long)]
        id: String,
        #[arg(long)]
        g: String,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep model parameters over a cartesian grid of values.
    Sweep {
        #[arg(long)]
        model: String,
        /// Axis spec `name=v1,v2,...`; repeat per parameter.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        /// Realizations per parameter point.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "final-state")]
        g: String,
        /// Sweep id (storage namespace prefix).
        #[arg(long, default_value = "sweep")]
        id: String,
        #[command(flatten)]
        common: Common,
    },
    /// Strong/weak scaling benchmark over the ensemble engine.
    Bench {
        /// strong (fixed total jobs) or weak (fixed jobs per worker).
        #[arg(long)]
        mode: String,
        /// Comma-separated worker counts, e.g. 1,2,4,8.
        #[arg(long, default_value = "1,2,4,8")]
        workers: String,
        /// Total jobs (strong) or jobs per worker (weak).
        #[arg(long, default_value_t = 100)]
        jobs: usize,
        /// Report path; writes <path>.csv and <path>.json.
        #[arg(long, default_value = "bench-report")]
        report: PathBuf,
        /// Workload model (defaults to the pinned yeast benchmark).
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Export a trajectory file to CSV, optionally with a mesh snapshot.
    Export {
        /// Trajectory file to read.
        #[arg(long)]
        traj: PathBuf,
        /// Write per-sample CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Time index for --mesh-csv.
        #[arg(long)]
        snapshot: Option<usize>,
        /// Write an x,y,z,subdomain,counts snapshot here (needs --model).
        #[arg(long)]
        mesh_csv: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
    },
    /// Yeast polarization preset: density-dependent switch sweep.
    YeastPolarization {
        /// Total molecule counts to sweep.
        #[arg(long, default_value = "150,400,800,1600,4000,12000")]
        n_values: String,
        /// Realizations per point.
        #[arg(long, default_value_t = 4)]
        ensemble: usize,
        #[arg(long, default_value_t = YeastParams::default().k_on)]
        k_on: f64,
        #[arg(long, default_value_t = YeastParams::default().k_off)]
        k_off: f64,
        #[arg(long, default_value_t = YeastParams::default().k_fb)]
        k_fb: f64,
        #[arg(long, default_value_t = YeastParams::default().d_cyt)]
        d_cyt: f64,
        #[arg(long, default_value_t = YeastParams::default().d_mem)]
        d_mem: f64,
        #[arg(long, default_value_t = YeastParams::default().mesh_subdiv)]
        subdiv: u32,
        #[arg(long, default_value_t = YeastParams::default().t_end)]
        t_end: f64,
        #[command(flatten)]
        common: Common,
    },
}

enum AppError {
    User(String),
    Runtime(String),
}

impl AppError {
    fn user(e: impl std::fmt::Display) -> Self {
        AppError::User(e.to_string())
    }
    fn runtime(e: impl std::fmt::Display) -> Self {
        AppError::Runtime(e.to_string())
    }
}

fn classify_engine(e: EngineError) -> AppError {
    match e {
        EngineError::VarianceUndefined(_)
        | EngineError::StorageModeRequired
        | EngineError::UnknownParameter(_)
        | EngineError::EmptySweep
        | EngineError::ModelMismatch
        | EngineError::Model(_) => AppError::User(e.to_string()),
        other => AppError::Runtime(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version also arrive through the error path
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_model(spec: &str) -> Result<ModelSpec, AppError> {
    if let Some(preset) = spec.strip_prefix("preset:") {
        return match preset {
            "yeast-polarization" => {
                build_yeast_model(600, &YeastParams::default()).map_err(AppError::user)
            }
            other => Err(AppError::User(format!("unknown preset {other:?}"))),
        };
    }
    parse_model(Path::new(spec)).map_err(AppError::user)
}

fn settings(common: &Common) -> Result<StorageSettings, AppError> {
    match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| AppError::User(format!("config {}: {e}", path.display())))?;
            StorageSettings::from_config_str(&text).map_err(AppError::user)
        }
        None => Ok(StorageSettings::from_env()),
    }
}

fn make_backend(
    common: &Common,
) -> Result<(StorageMode, Option<Box<dyn StorageBackend>>), AppError> {
    let mode: StorageMode = common.storage.parse().map_err(AppError::User)?;
    let backend: Option<Box<dyn StorageBackend>> = match mode {
        StorageMode::NoStorage => None,
        StorageMode::Shared => {
            let cfg = settings(common)?;
            let dir = common
                .shared_dir
                .clone()
                .or_else(|| cfg.shared_dir.map(PathBuf::from))
                .unwrap_or_else(|| common.out.join("shared"));
            Some(Box::new(SharedStorage::at(&dir).map_err(AppError::runtime)?))
        }
        StorageMode::Persistent => {
            let cfg = settings(common)?;
            let endpoint = cfg.endpoint.ok_or_else(|| {
                AppError::User(
                    "persistent storage needs RF_STORAGE_ENDPOINT or [storage] endpoint".into(),
                )
            })?;
            let key = cfg.key.unwrap_or_default();
            let secret = cfg.secret.unwrap_or_default();
            Some(Box::new(
                object_store_client(S3Config::new(&endpoint, &key, &secret))
                    .map_err(AppError::user)?,
            ))
        }
    };
    Ok((mode, backend))
}

fn ensure_out(dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir).map_err(AppError::runtime)
}

fn write_summary(
    out: &Path,
    name: &str,
    stat_name: &str,
    summary: &rfsim::ensemble::StatSummary,
) -> Result<(), AppError> {
    ensure_out(out)?;
    let json_path = out.join(format!("{name}.json"));
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(summary).map_err(AppError::runtime)?,
    )
    .map_err(AppError::runtime)?;
    let csv_path = out.join(format!("{name}.csv"));
    std::fs::write(&csv_path, summary.to_csv(stat_name)).map_err(AppError::runtime)?;
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), AppError> {
    match cmd {
        Command::Validate { model } => {
            let m = load_model(&model)?;
            let diags = m.validate();
            if diags.is_empty() {
                println!(
                    "model is valid: {} voxels, {} species, {} reactions",
                    m.mesh.n_voxels(),
                    m.n_species(),
                    m.reactions.len()
                );
                Ok(())
            } else {
                for d in &diags {
                    eprintln!("{d}");
                }
                Err(AppError::User(format!("{} diagnostic(s)", diags.len())))
            }
        }

        Command::Run {
            model,
            solver,
            max_events,
            common,
        } => {
            let m = load_model(&model)?;
            let compiled = m.compile().map_err(AppError::user)?;
            let diffusion = m.assemble_diffusion().map_err(AppError::user)?;
            let mut opts = SolverOptions::default();
            if let Some(cap) = max_events {
                opts.max_events = cap;
            }
            let traj = match solver.as_str() {
                "nsm" => run_nsm_with(&compiled, &diffusion, common.seed, &opts),
                "direct-ssa" => run_direct_ssa_with(&compiled, &diffusion, common.seed, &opts),
                other => return Err(AppError::User(format!("unknown solver {other:?}"))),
            }
            .map_err(AppError::runtime)?;
            ensure_out(&common.out)?;
            let path = common
                .out
                .join(format!("trajectory-seed{}.rftraj", common.seed));
            let bytes = write_trajectory_file(&traj, &path).map_err(AppError::runtime)?;
            println!(
                "wrote {} ({bytes} bytes, {} reaction + {} diffusion events, {:.3}s)",
                path.display(),
                traj.stats.reaction_events,
                traj.stats.diffusion_events,
                traj.stats.wall_seconds
            );
            Ok(())
        }

        Command::Ensemble {
            model,
            n,
            g,
            id,
            common,
        } => {
            let m = load_model(&model)?;
            let (mode, backend) = make_backend(&common)?;
            let registry = Registry::with_builtins();
            match mode {
                StorageMode::NoStorage => {
                    let spec = g.ok_or_else(|| {
                        AppError::User("--storage none needs --g for fused post-processing".into())
                    })?;
                    let post = registry.resolve(&spec, &m).map_err(AppError::User)?;
                    let summary =
                        run_ensemble_nostorage(&m, n, post.as_ref(), common.workers, common.seed)
                            .map_err(classify_engine)?;
                    println!("{n} realizations, no storage; {}", format_summary(&summary));
                    write_summary(&common.out, "summary", post.name(), &summary)
                }
                _ => {
                    let backend = backend.expect("stored modes always build a backend");
                    let mut handle = EnsembleHandle::new(&id, &m, common.seed, mode);
                    add_realizations(&mut handle, &m, n, common.workers, backend.as_ref())
                        .map_err(classify_engine)?;
                    backend
                        .put(
                            &handle.metadata_key(),
                            handle.to_json().to_string().as_bytes(),
                        )
                        .map_err(AppError::runtime)?;
                    println!(
                        "stored {} realizations under {}/ ({} storage)",
                        handle.count, handle.id, mode
                    );
                    if let Some(spec) = g {
                        let post = registry.resolve(&spec, &m).map_err(AppError::User)?;
                        let summary = map_aggregate(
                            &handle,
                            &m,
                            post.as_ref(),
                            common.workers,
                            backend.as_ref(),
                        )
                        .map_err(classify_engine)?;
                        println!("{}", format_summary(&summary));
                        write_summary(&common.out, "summary", post.name(), &summary)?;
                    }
                    Ok(())
                }
            }
        }

        Command::Postprocess {
            model,
            id,
            g,
            common,
        } => {
            let m = load_model(&model)?;
            let (mode, backend) = make_backend(&common)?;
            if mode == StorageMode::NoStorage {
                return Err(AppError::User(
                    "postprocess reads stored realizations; use --storage shared|persistent"
                        .into(),
                ));
            }
            let backend = backend.expect("stored modes always build a backend");
            let meta_key = StorageKey::new(&id, "handle.json").map_err(AppError::user)?;
            let doc = backend.get(&meta_key).map_err(AppError::user)?;
            let doc: serde_json::Value = serde_json::from_slice(&doc).map_err(AppError::user)?;
            let handle = EnsembleHandle::from_json(&doc).map_err(AppError::User)?;
            let registry = Registry::with_builtins();
            let post = registry.resolve(&g, &m).map_err(AppError::User)?;
            let summary =
                map_aggregate(&handle, &m, post.as_ref(), common.workers, backend.as_ref())
                    .map_err(classify_engine)?;
            println!("{}", format_summary(&summary));
            write_summary(&common.out, "summary", post.name(), &summary)
        }

        Command::Sweep {
            model,
            params,
            n,
            g,
            id,
            common,
        } => {
            let m = load_model(&model)?;
            let mut axes = Vec::new();
            for p in &params {
                let (name, values) = p.split_once('=').ok_or_else(|| {
                    AppError::User(format!("--param {p:?} must be name=v1,v2,..."))
                })?;
                let values: Vec<f64> = values
                    .split(',')
                    .map(|v| {
                        v.parse()
                            .map_err(|_| AppError::User(format!("bad value {v:?}")))
                    })
                    .collect::<Result<_, _>>()?;
                axes.push((name.to_string(), values));
            }
            let (mode, backend) = make_backend(&common)?;
            let registry = Registry::with_builtins();
            let sweep = SweepSpec {
                axes,
                ensemble_size: n,
                post: g,
            };
            let table = run_parameter_sweep(
                &m,
                &sweep,
                common.workers,
                mode,
                backend.as_deref(),
                common.seed,
                &id,
                &registry,
            )
            .map_err(classify_engine)?;
            let failed = table.failed_points();
            if failed == table.points.len() {
                return Err(AppError::Runtime(format!(
                    "all {failed} sweep points failed; first error: {}",
                    table.points[0].outcome.as_ref().unwrap_err()
                )));
            }
            if failed > 0 {
                eprintln!("warning: {failed} of {} points failed", table.points.len());
            }
            ensure_out(&common.out)?;
            let csv = common.out.join("sweep.csv");
            let json = common.out.join("sweep.json");
            std::fs::write(&csv, table.to_csv()).map_err(AppError::runtime)?;
            std::fs::write(
                &json,
                serde_json::to_string_pretty(&table.to_json()).map_err(AppError::runtime)?,
            )
            .map_err(AppError::runtime)?;
            println!(
                "{} points ({} failed); wrote {} and {}",
                table.points.len(),
                failed,
                csv.display(),
                json.display()
            );
            Ok(())
        }

        Command::Bench {
            mode,
            workers,
            jobs,
            report,
            model,
            common,
        } => {
            let m = match &model {
                Some(spec) => load_model(spec)?,
                None => bench_workload_model(),
            };
            let worker_counts: Vec<usize> = workers
                .split(',')
                .map(|w| {
                    w.parse()
                        .map_err(|_| AppError::User(format!("bad worker count {w:?}")))
                })
                .collect::<Result<_, _>>()?;
            if worker_counts.is_empty() || worker_counts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(AppError::User("--workers must be strictly increasing".into()));
            }
            let (storage_mode, backend) = make_backend(&common)?;
            let result = match mode.as_str() {
                "strong" => bench_strong(
                    &m,
                    jobs,
                    &worker_counts,
                    storage_mode,
                    backend.as_deref(),
                    BENCH_POST_SPEC,
                    common.seed,
                ),
                "weak" => bench_weak(
                    &m,
                    jobs,
                    &worker_counts,
                    storage_mode,
                    backend.as_deref(),
                    BENCH_POST_SPEC,
                    common.seed,
                ),
                other => return Err(AppError::User(format!("unknown bench mode {other:?}"))),
            }
            .map_err(classify_engine)?;
            for row in &result.rows {
                println!(
                    "workers {:>3}  jobs {:>6}  wall {:>8.3}s  speedup {:>6.2}  efficiency {:.2}",
                    row.workers, row.jobs, row.wall_seconds, row.speedup, row.efficiency
                );
            }
            let base = report.to_string_lossy().into_owned();
            let base = base
                .trim_end_matches(".csv")
                .trim_end_matches(".json")
                .to_string();
            if let Some(parent) = Path::new(&base).parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(AppError::runtime)?;
                }
            }
            std::fs::write(format!("{base}.csv"), result.to_csv()).map_err(AppError::runtime)?;
            std::fs::write(
                format!("{base}.json"),
                serde_json::to_string_pretty(&result.to_json()).map_err(AppError::runtime)?,
            )
            .map_err(AppError::runtime)?;
            println!("wrote {base}.csv and {base}.json");
            Ok(())
        }

        Command::Export {
            traj,
            csv,
            snapshot,
            mesh_csv,
            model,
        } => {
            let t = read_trajectory_file(&traj).map_err(AppError::user)?;
            if let Some(path) = csv {
                let mut f = std::fs::File::create(&path).map_err(AppError::runtime)?;
                t.export_csv(&mut f).map_err(AppError::runtime)?;
                println!("wrote {}", path.display());
            }
            if let Some(path) = mesh_csv {
                let idx = snapshot.ok_or_else(|| {
                    AppError::User("--mesh-csv needs --snapshot <t-index>".into())
                })?;
                let spec = model.ok_or_else(|| {
                    AppError::User("--mesh-csv needs --model for the mesh geometry".into())
                })?;
                let m = load_model(&spec)?;
                let mut f = std::fs::File::create(&path).map_err(AppError::runtime)?;
                t.export_mesh_snapshot(&m.mesh, &m.subdomains, idx, &mut f)
                    .map_err(AppError::user)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }

        Command::YeastPolarization {
            n_values,
            ensemble,
            k_on,
            k_off,
            k_fb,
            d_cyt,
            d_mem,
            subdiv,
            t_end,
            common,
        } => {
            let n_values: Vec<u64> = n_values
                .split(',')
                .map(|v| v.parse().map_err(|_| AppError::User(format!("bad N {v:?}"))))
                .collect::<Result<_, _>>()?;
            let params = YeastParams {
                k_on,
                k_off,
                k_fb,
                d_cyt,
                d_mem,
                mesh_subdiv: subdiv,
                t_end,
                ..Default::default()
            };
            println!(
                "sweeping N over {n_values:?}; mean-field switch estimate N_c = {:.0}",
                params.predicted_switch()
            );
            let table =
                run_switch_sweep(&n_values, &params, ensemble, common.workers, common.seed)
                    .map_err(classify_engine)?;
            for p in &table.points {
                match &p.outcome {
                    Ok(s) => {
                        let last = s.mean.len() - 1;
                        println!(
                            "N = {:>7}: polarization {:>5.1}% (std {:.1}), final membrane count {:.1}",
                            p.values[0].1, s.mean[0], s.mean[1], s.mean[last]
                        );
                    }
                    Err(e) => println!("N = {:>7}: failed: {e}", p.values[0].1),
                }
            }
            ensure_out(&common.out)?;
            let csv = common.out.join("yeast_switch.csv");
            let json = common.out.join("yeast_switch.json");
            std::fs::write(&csv, table.to_csv()).map_err(AppError::runtime)?;
            std::fs::write(
                &json,
                serde_json::to_string_pretty(&table.to_json()).map_err(AppError::runtime)?,
            )
            .map_err(AppError::runtime)?;
            println!("wrote {} and {}", csv.display(), json.display());
            Ok(())
        }
    }
}

fn format_summary(s: &rfsim::ensemble::StatSummary) -> String {
    let preview: Vec<String> = s
        .mean
        .iter()
        .take(4)
        .zip(&s.ci95_halfwidth)
        .map(|(m, ci)| format!("{m:.4} ± {ci:.4}"))
        .collect();
    let ellipsis = if s.mean.len() > 4 { ", ..." } else { "" };
    format!("K = {}; mean [{}{}]", s.n, preview.join(", "), ellipsis)
}
