use std::sync::atomic::{AtomicBool, Ordering};

use super::*;
use crate::mesh::{build_cartesian_grid, SubdomainMap};
use crate::model::{InitialDirective, MeshSource, Propensity, RateConstant, Reaction, Species};
use crate::storage::{LocalStorage, Receipt, StorageError};

fn birth_death_model() -> ModelSpec {
    let k = 2;
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
    m.species.push(Species {
        name: "A".into(),
        diffusion_constant: 0.8,
        allowed_subdomains: [1u32].into_iter().collect(),
    });
    m.reactions.push(Reaction {
        name: "birth".into(),
        reactants: Default::default(),
        products: [("A".to_string(), 1u32)].into_iter().collect(),
        propensity: Propensity::MassAction(RateConstant::Value(6.0)),
        restrict_to: None,
    });
    m.reactions.push(Reaction {
        name: "death".into(),
        reactants: [("A".to_string(), 1u32)].into_iter().collect(),
        products: Default::default(),
        propensity: Propensity::MassAction(RateConstant::Value(1.0)),
        restrict_to: None,
    });
    m.initial.push(InitialDirective::Set {
        species: "A".into(),
        voxel: 0,
        count: 4,
    });
    m.set_tspan_linspace(0.0, 1.5, 4);
    m
}

fn final_count(model: &ModelSpec) -> std::sync::Arc<dyn PostProcessor> {
    Registry::with_builtins()
        .resolve("final-count:A", model)
        .unwrap()
}

#[test]
fn add_zero_realizations_changes_nothing() {
    let model = birth_death_model();
    let store = LocalStorage::ephemeral().unwrap();
    let mut handle = EnsembleHandle::new("ens0", &model, 1, StorageMode::Shared);
    add_realizations(&mut handle, &model, 0, 2, &store).unwrap();
    assert_eq!(handle.count, 0);
    assert!(store.list("ens0").unwrap().is_empty());
}

#[test]
fn nostorage_mode_rejects_add_realizations() {
    let model = birth_death_model();
    let store = LocalStorage::ephemeral().unwrap();
    let mut handle = EnsembleHandle::new("ens0", &model, 1, StorageMode::NoStorage);
    assert!(matches!(
        add_realizations(&mut handle, &model, 2, 1, &store),
        Err(EngineError::StorageModeRequired)
    ));
}

#[test]
fn stored_bytes_identical_across_worker_counts() {
    let model = birth_death_model();
    let mut per_worker_bytes = Vec::new();
    for workers in [1usize, 2, 8] {
        let store = LocalStorage::ephemeral().unwrap();
        let mut handle = EnsembleHandle::new("ens", &model, 99, StorageMode::Shared);
        add_realizations(&mut handle, &model, 12, workers, &store).unwrap();
        assert_eq!(handle.count, 12);
        let keys = handle.keys();
        assert_eq!(keys.len(), 12);
        let bytes: Vec<Vec<u8>> = keys.iter().map(|k| store.get(k).unwrap()).collect();
        per_worker_bytes.push(bytes);
    }
    assert_eq!(per_worker_bytes[0], per_worker_bytes[1]);
    assert_eq!(per_worker_bytes[0], per_worker_bytes[2]);
}

/// Backend wrapper that fails one specific put exactly once.
struct FlakyOnce<B> {
    inner: B,
    victim: String,
    tripped: AtomicBool,
}

impl<B: StorageBackend> StorageBackend for FlakyOnce<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn put(&self, key: &StorageKey, bytes: &[u8]) -> Result<Receipt, StorageError> {
        if key.render() == self.victim && !self.tripped.swap(true, Ordering::SeqCst) {
            return Err(StorageError::Backend("injected worker crash".into()));
        }
        self.inner.put(key, bytes)
    }
    fn get(&self, key: &StorageKey) -> Result<Vec<u8>, StorageError> {
        self.inner.get(key)
    }
    fn delete(&self, key: &StorageKey) -> Result<(), StorageError> {
        self.inner.delete(key)
    }
    fn list(&self, ns: &str) -> Result<Vec<StorageKey>, StorageError> {
        self.inner.list(ns)
    }
    fn exists(&self, key: &StorageKey) -> Result<bool, StorageError> {
        self.inner.exists(key)
    }
}

#[test]
fn injected_crash_is_retried_and_key_set_completes() {
    let model = birth_death_model();
    let store = FlakyOnce {
        inner: LocalStorage::ephemeral().unwrap(),
        victim: "ens/r7".into(),
        tripped: AtomicBool::new(false),
    };
    let mut handle = EnsembleHandle::new("ens", &model, 5, StorageMode::Shared);
    add_realizations(&mut handle, &model, 10, 4, &store).unwrap();
    let keys = store.list("ens").unwrap();
    assert_eq!(keys.len(), 10);
    assert!(store.tripped.load(Ordering::SeqCst));
}

#[test]
fn map_aggregate_of_constant_g_has_zero_variance() {
    let model = birth_death_model();
    let store = LocalStorage::ephemeral().unwrap();
    let mut handle = EnsembleHandle::new("ens", &model, 3, StorageMode::Shared);
    add_realizations(&mut handle, &model, 5, 2, &store).unwrap();
    let constant = FnProcessor::new("const7", 1, |_t, _c| Ok(vec![7.0]));
    let s = map_aggregate(&handle, &model, &constant, 2, &store).unwrap();
    assert_eq!(s.mean, vec![7.0]);
    assert_eq!(s.variance, vec![0.0]);
    assert_eq!(s.ci95_halfwidth, vec![0.0]);
    assert_eq!(s.n, 5);
}

#[test]
fn hand_chosen_outputs_give_exact_statistics() {
    // g outputs 1, 2, 3, 4 across four realizations
    let model = birth_death_model();
    let store = LocalStorage::ephemeral().unwrap();
    let mut handle = EnsembleHandle::new("ens", &model, 3, StorageMode::Shared);
    add_realizations(&mut handle, &model, 4, 2, &store).unwrap();
    let g = FnProcessor::new("by-seed-rank", 1, move |traj, _| {
        // recover the realization index from the stored seed
        let idx = (0..4)
            .find(|&i| derive_seed(3, i) == traj.seed)
            .expect("seed belongs to this ensemble");
        Ok(vec![idx as f64 + 1.0])
    });
    let mut summaries = Vec::new();
    for workers in [1usize, 2, 8] {
        summaries.push(map_aggregate(&handle, &model, &g, workers, &store).unwrap());
    }
    let s = &summaries[0];
    assert_eq!(s.mean, vec![2.5]);
    assert_eq!(s.variance, vec![5.0 / 3.0]);
    assert_eq!(s.ci95_halfwidth, vec![1.96 * (5.0f64 / 12.0).sqrt()]);
    // bit-stable across worker counts
    assert_eq!(summaries[0], summaries[1]);
    assert_eq!(summaries[0], summaries[2]);
}

#[test]
fn variance_undefined_below_two() {
    let model = birth_death_model();
    let store = LocalStorage::ephemeral().unwrap();
    let mut handle = EnsembleHandle::new("ens", &model, 3, StorageMode::Shared);
    add_realizations(&mut handle, &model, 1, 1, &store).unwrap();
    let g = final_count(&model);
    assert!(matches!(
        map_aggregate(&handle, &model, g.as_ref(), 1, &store),
        Err(EngineError::VarianceUndefined(1))
    ));
    assert!(matches!(
        run_ensemble_nostorage(&model, 1, g.as_ref(), 1, 3),
        Err(EngineError::VarianceUndefined(1))
    ));
}

#[test]
fn arity_mismatch_is_reported() {
    let model = birth_death_model();
    let lying = FnProcessor::new("liar", 3, |_t, _c| Ok(vec![1.0]));
    match run_ensemble_nostorage(&model, 2, &lying, 1, 3) {
        Err(EngineError::Task { detail, .. }) => assert!(detail.contains("declared 3"), "{detail}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn fused_and_stored_paths_agree_exactly() {
    let model = birth_death_model();
    let g = final_count(&model);
    let base_seed = 2024;
    let n = 8;

    let fused = run_ensemble_nostorage(&model, n, g.as_ref(), 3, base_seed).unwrap();

    let store = LocalStorage::ephemeral().unwrap();
    let mut handle = EnsembleHandle::new("wfc", &model, base_seed, StorageMode::Shared);
    add_realizations(&mut handle, &model, n, 2, &store).unwrap();
    let stored = map_aggregate(&handle, &model, g.as_ref(), 5, &store).unwrap();

    assert_eq!(fused, stored);
}

#[test]
fn conservation_post_processor_has_zero_variance() {
    // pure conversion conserves the total; g = final total molecules
    let mut model = birth_death_model();
    model.reactions.clear();
    model.reactions.push(Reaction {
        name: "convert".into(),
        reactants: [("A".to_string(), 1u32)].into_iter().collect(),
        products: [("B".to_string(), 1u32)].into_iter().collect(),
        propensity: Propensity::MassAction(RateConstant::Value(2.0)),
        restrict_to: None,
    });
    model.species.push(Species {
        name: "B".into(),
        diffusion_constant: 0.2,
        allowed_subdomains: [1u32].into_iter().collect(),
    });
    let total = FnProcessor::new("grand-total", 1, |traj, _| {
        let last = traj.n_times() - 1;
        Ok(vec![traj.frame(last).iter().sum::<u64>() as f64])
    });
    let s = run_ensemble_nostorage(&model, 6, &total, 2, 5).unwrap();
    assert_eq!(s.mean, vec![4.0]); // initial total
    assert_eq!(s.variance, vec![0.0]);
}

#[test]
fn accumulator_merge_is_associative_and_commutative() {
    let mut rng = crate::rng::SimRng::new(8);
    let make = |rng: &mut crate::rng::SimRng, n: usize| {
        let mut acc = StatAccumulator::default();
        for _ in 0..n {
            acc.push(&[rng.next_f64(), rng.next_f64() * 10.0]);
        }
        acc
    };
    let a = make(&mut rng, 5);
    let b = make(&mut rng, 3);
    let c = make(&mut rng, 7);
    let left = a.clone().merge(&b).merge(&c);
    let right = a.clone().merge(&b.clone().merge(&c));
    let flipped = c.clone().merge(&b).merge(&a);
    for (x, y) in [(&left, &right), (&left, &flipped)] {
        assert_eq!(x.n, y.n);
        for i in 0..2 {
            assert!((x.sum[i] - y.sum[i]).abs() <= 1e-12 * x.sum[i].abs());
            assert!((x.sumsq[i] - y.sumsq[i]).abs() <= 1e-12 * x.sumsq[i].abs());
        }
    }
}

#[test]
fn sweep_single_point_equals_single_ensemble() {
    let mut model = birth_death_model();
    model.parameters.push(crate::model::Parameter {
        name: "kb".into(),
        value: 6.0,
    });
    model.reactions[0].propensity = Propensity::MassAction(RateConstant::Param("kb".into()));
    let registry = Registry::with_builtins();
    let sweep = SweepSpec {
        axes: vec![("kb".into(), vec![6.0])],
        ensemble_size: 6,
        post: "final-count:A".into(),
    };
    let table = run_parameter_sweep(
        &model,
        &sweep,
        2,
        StorageMode::NoStorage,
        None,
        77,
        "sw",
        &registry,
    )
    .unwrap();
    assert_eq!(table.points.len(), 1);
    let point_summary = table.points[0].outcome.as_ref().unwrap();

    let g = final_count(&model);
    let single =
        run_ensemble_nostorage(&model, 6, g.as_ref(), 2, derive_seed(77, 0)).unwrap();
    assert_eq!(*point_summary, single);
}

#[test]
fn cartesian_sweep_enumerates_all_tuples() {
    let mut model = birth_death_model();
    for (name, value) in [("kb", 6.0), ("kd", 1.0)] {
        model.parameters.push(crate::model::Parameter {
            name: name.into(),
            value,
        });
    }
    model.reactions[0].propensity = Propensity::MassAction(RateConstant::Param("kb".into()));
    model.reactions[1].propensity = Propensity::MassAction(RateConstant::Param("kd".into()));
    let registry = Registry::with_builtins();
    let sweep = SweepSpec {
        axes: vec![
            ("kb".into(), vec![2.0, 6.0]),
            ("kd".into(), vec![0.5, 1.0, 2.0]),
        ],
        ensemble_size: 2,
        post: "final-count:A".into(),
    };
    let table = run_parameter_sweep(
        &model,
        &sweep,
        2,
        StorageMode::NoStorage,
        None,
        1,
        "sw",
        &registry,
    )
    .unwrap();
    assert_eq!(table.points.len(), 6);
    let tuples: Vec<Vec<f64>> = table
        .points
        .iter()
        .map(|p| p.values.iter().map(|&(_, v)| v).collect())
        .collect();
    assert_eq!(
        tuples,
        vec![
            vec![2.0, 0.5],
            vec![2.0, 1.0],
            vec![2.0, 2.0],
            vec![6.0, 0.5],
            vec![6.0, 1.0],
            vec![6.0, 2.0],
        ]
    );
    assert_eq!(table.failed_points(), 0);
    // CSV: one row per point (arity 1) plus header
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("kb,kd,stat_name,component,mean,variance,ci95_halfwidth,K"));
}

#[test]
fn sweep_point_failure_is_flagged_and_sweep_continues() {
    let mut model = birth_death_model();
    model.parameters.push(crate::model::Parameter {
        name: "kb".into(),
        value: 6.0,
    });
    model.reactions[0].propensity = Propensity::MassAction(RateConstant::Param("kb".into()));
    let mut registry = Registry::with_builtins();
    registry.register("explode-at-2", |_args, model| {
        let kb = model.parameters.iter().find(|p| p.name == "kb").unwrap().value;
        if kb == 2.0 {
            Err("cannot build post-processor for kb=2".into())
        } else {
            Ok(std::sync::Arc::new(FnProcessor::new("ok", 1, |_t, _c| Ok(vec![1.0]))))
        }
    });
    let sweep = SweepSpec {
        axes: vec![("kb".into(), vec![1.0, 2.0, 3.0])],
        ensemble_size: 2,
        post: "explode-at-2".into(),
    };
    let table = run_parameter_sweep(
        &model,
        &sweep,
        1,
        StorageMode::NoStorage,
        None,
        1,
        "sw",
        &registry,
    )
    .unwrap();
    assert_eq!(table.points.len(), 3);
    assert_eq!(table.failed_points(), 1);
    assert!(table.points[1].outcome.is_err());
    assert!(table.points[0].outcome.is_ok());
    assert!(table.points[2].outcome.is_ok());
    // the JSON document flags the failed point
    let json = table.to_json();
    assert!(json["points"][1]["error"].is_string());
}

#[test]
fn sweep_rejects_unknown_parameter_and_empty_axes() {
    let model = birth_death_model();
    let registry = Registry::with_builtins();
    let bad = SweepSpec {
        axes: vec![("ghost".into(), vec![1.0])],
        ensemble_size: 2,
        post: "final-count:A".into(),
    };
    assert!(matches!(
        run_parameter_sweep(&model, &bad, 1, StorageMode::NoStorage, None, 1, "s", &registry),
        Err(EngineError::UnknownParameter(_))
    ));
    let empty = SweepSpec {
        axes: vec![],
        ensemble_size: 2,
        post: "final-count:A".into(),
    };
    assert!(matches!(
        run_parameter_sweep(&model, &empty, 1, StorageMode::NoStorage, None, 1, "s", &registry),
        Err(EngineError::EmptySweep)
    ));
}

#[test]
fn stored_sweep_keeps_per_point_namespaces() {
    let mut model = birth_death_model();
    model.parameters.push(crate::model::Parameter {
        name: "kb".into(),
        value: 6.0,
    });
    model.reactions[0].propensity = Propensity::MassAction(RateConstant::Param("kb".into()));
    let registry = Registry::with_builtins();
    let store = LocalStorage::ephemeral().unwrap();
    let sweep = SweepSpec {
        axes: vec![("kb".into(), vec![2.0, 6.0])],
        ensemble_size: 3,
        post: "final-count:A".into(),
    };
    let table = run_parameter_sweep(
        &model,
        &sweep,
        2,
        StorageMode::Shared,
        Some(&store),
        9,
        "mysweep",
        &registry,
    )
    .unwrap();
    assert_eq!(table.failed_points(), 0);
    assert_eq!(store.list("mysweep/p0").unwrap().len(), 3);
    assert_eq!(store.list("mysweep/p1").unwrap().len(), 3);
}
