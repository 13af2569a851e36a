//! One behavioral contract, three backends.
//!
//! The same randomized put/get/delete/list/exists sequences run against
//! an in-memory reference map on the local, shared and persistent tiers;
//! any divergence fails. Also covers concurrent writers and the teardown
//! semantics that distinguish the tiers.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use proptest::prelude::*;

use rfsim::storage::memserver::MemServer;
use rfsim::storage::{
    object_store_client, LocalStorage, S3Config, SharedStorage, StorageBackend, StorageError,
    StorageKey,
};

#[derive(Clone, Debug)]
enum Op {
    Put(u8, Vec<u8>),
    Get(u8),
    Delete(u8),
    Exists(u8),
    List,
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..10, proptest::collection::vec(any::<u8>(), 0..64)).prop_map(|(k, v)| Op::Put(k, v)),
        (0u8..10).prop_map(Op::Get),
        (0u8..10).prop_map(Op::Delete),
        (0u8..10).prop_map(Op::Exists),
        Just(Op::List),
    ]
}

/// Drive one backend and the reference map through the same sequence,
/// checking observable equivalence at every step.
fn check_sequence(backend: &dyn StorageBackend, namespace: &str, ops: &[Op]) {
    let mut reference: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let key_of = |k: u8| StorageKey::new(namespace, &format!("k{k}")).unwrap();
    for (step, op) in ops.iter().enumerate() {
        match op {
            Op::Put(k, v) => {
                let receipt = backend.put(&key_of(*k), v).unwrap();
                assert_eq!(receipt.size, v.len() as u64, "step {step}");
                reference.insert(format!("k{k}"), v.clone());
            }
            Op::Get(k) => match (backend.get(&key_of(*k)), reference.get(&format!("k{k}"))) {
                (Ok(bytes), Some(expect)) => assert_eq!(&bytes, expect, "step {step}"),
                (Err(StorageError::NotFound(_)), None) => {}
                (got, want) => panic!("step {step}: get mismatch {got:?} vs {want:?}"),
            },
            Op::Delete(k) => {
                backend.delete(&key_of(*k)).unwrap();
                reference.remove(&format!("k{k}"));
            }
            Op::Exists(k) => {
                let got = backend.exists(&key_of(*k)).unwrap();
                assert_eq!(got, reference.contains_key(&format!("k{k}")), "step {step}");
            }
            Op::List => {
                let got: Vec<String> = backend
                    .list(namespace)
                    .unwrap()
                    .into_iter()
                    .map(|k| k.name().to_string())
                    .collect();
                let want: Vec<String> = reference.keys().cloned().collect();
                assert_eq!(got, want, "step {step}: live key set diverged");
            }
        }
    }
}

fn server() -> &'static MemServer {
    static SERVER: OnceLock<MemServer> = OnceLock::new();
    SERVER.get_or_init(|| MemServer::start("contract-key", "contract-secret", &["contract"]).unwrap())
}

fn persistent_client() -> rfsim::storage::PersistentStorage {
    let mut cfg = S3Config::new(&server().endpoint("contract"), "contract-key", "contract-secret");
    cfg.backoff_ms = 2;
    object_store_client(cfg).unwrap()
}

fn case_namespace() -> String {
    static CASE: AtomicU64 = AtomicU64::new(0);
    format!("case{}", CASE.fetch_add(1, Ordering::SeqCst))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn local_matches_reference(ops in proptest::collection::vec(op_strategy(), 1..50)) {
        let store = LocalStorage::ephemeral().unwrap();
        check_sequence(&store, &case_namespace(), &ops);
    }

    #[test]
    fn shared_matches_reference(ops in proptest::collection::vec(op_strategy(), 1..50)) {
        let dir = tempfile::TempDir::new().unwrap();
        let store = SharedStorage::at(dir.path()).unwrap();
        check_sequence(&store, &case_namespace(), &ops);
    }

    #[test]
    fn persistent_matches_reference(ops in proptest::collection::vec(op_strategy(), 1..50)) {
        let store = persistent_client();
        check_sequence(&store, &case_namespace(), &ops);
    }
}

fn concurrent_writers(backend: &dyn StorageBackend, namespace: &str) {
    let writers = 64;
    std::thread::scope(|scope| {
        for w in 0..writers {
            scope.spawn(move || {
                let key = StorageKey::new(namespace, &format!("w{w}")).unwrap();
                let payload = vec![w as u8; 1024 + w];
                backend.put(&key, &payload).unwrap();
                assert_eq!(backend.get(&key).unwrap(), payload);
            });
        }
    });
    let listed = backend.list(namespace).unwrap();
    assert_eq!(listed.len(), writers, "all concurrent writes visible");
    for w in 0..writers {
        let key = StorageKey::new(namespace, &format!("w{w}")).unwrap();
        assert_eq!(backend.get(&key).unwrap(), vec![w as u8; 1024 + w]);
    }
}

#[test]
fn sixty_four_concurrent_writers_do_not_interfere() {
    let local = LocalStorage::ephemeral().unwrap();
    concurrent_writers(&local, "stress");

    let dir = tempfile::TempDir::new().unwrap();
    let shared = SharedStorage::at(dir.path()).unwrap();
    concurrent_writers(&shared, "stress");

    let persistent = persistent_client();
    concurrent_writers(&persistent, "stress-persistent");
}

#[test]
fn persistent_survives_teardown_shared_does_not() {
    let cluster_dir = tempfile::TempDir::new().unwrap();
    let shared_root = cluster_dir.path().join("shared");
    let shared = SharedStorage::at(&shared_root).unwrap();
    let persistent = persistent_client();

    let key = StorageKey::new("teardown", "results").unwrap();
    shared.put(&key, b"cluster data").unwrap();
    persistent.put(&key, b"cluster data").unwrap();

    // the cluster goes away: its disk (shared tier) disappears with it
    drop(shared);
    drop(cluster_dir);

    // a fresh "cluster" comes up later
    let new_dir = tempfile::TempDir::new().unwrap();
    let new_shared = SharedStorage::at(new_dir.path()).unwrap();
    assert!(matches!(
        new_shared.get(&key),
        Err(StorageError::NotFound(_))
    ));
    assert!(!new_shared.exists(&key).unwrap());

    // the object store outlived the cluster; a fresh client still reads
    let fresh_client = persistent_client();
    assert_eq!(fresh_client.get(&key).unwrap(), b"cluster data");
}
