//! Shared-nothing worker pool for indexed tasks.
//!
//! Workers are OS threads pulling indices from an atomic counter; each
//! task is a pure function of its index, so results are independent of
//! scheduling and worker count. A failing task is retried once, then the
//! whole run fails with that task's error. Results come back in index
//! order.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug)]
pub struct TaskFailure<E> {
    pub index: usize,
    pub error: E,
}

pub fn run_tasks<T, E, F>(workers: usize, n: usize, task: F) -> Result<Vec<T>, TaskFailure<E>>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync,
{
    let workers = workers.max(1);
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let failure: Mutex<Option<TaskFailure<E>>> = Mutex::new(None);

    let mut collected: Vec<Vec<(usize, T)>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for _ in 0..workers {
            handles.push(scope.spawn(|| {
                let mut local: Vec<(usize, T)> = Vec::new();
                loop {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= n {
                        break;
                    }
                    let outcome = task(idx).or_else(|_first_try| task(idx));
                    match outcome {
                        Ok(v) => local.push((idx, v)),
                        Err(error) => {
                            let mut slot = failure.lock().unwrap();
                            if slot.is_none() {
                                *slot = Some(TaskFailure { index: idx, error });
                            }
                            stop.store(true, Ordering::Relaxed);
                            break;
                        }
                    }
                }
                local
            }));
        }
        for h in handles {
            collected.push(h.join().expect("worker panicked"));
        }
    });

    if let Some(fail) = failure.into_inner().unwrap() {
        return Err(fail);
    }
    let mut indexed: Vec<(usize, T)> = collected.into_iter().flatten().collect();
    indexed.sort_by_key(|&(i, _)| i);
    debug_assert_eq!(indexed.len(), n);
    Ok(indexed.into_iter().map(|(_, v)| v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    #[test]
    fn results_come_back_in_index_order() {
        for workers in [1, 2, 8] {
            let out: Vec<usize> =
                run_tasks(workers, 100, |i| Ok::<_, ()>(i * i)).unwrap();
            assert_eq!(out.len(), 100);
            for (i, v) in out.iter().enumerate() {
                assert_eq!(*v, i * i);
            }
        }
    }

    #[test]
    fn transient_failure_is_retried_once() {
        let tries = AtomicU32::new(0);
        let out = run_tasks(4, 20, |i| {
            if i == 7 && tries.fetch_add(1, Ordering::SeqCst) == 0 {
                Err("crash")
            } else {
                Ok(i)
            }
        })
        .unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(tries.load(Ordering::SeqCst), 2); // failed once, retried
    }

    #[test]
    fn persistent_failure_fails_the_run() {
        let err = run_tasks(4, 20, |i| if i == 3 { Err("boom") } else { Ok(i) }).unwrap_err();
        assert_eq!(err.index, 3);
        assert_eq!(err.error, "boom");
    }

    #[test]
    fn zero_tasks() {
        let out: Vec<u8> = run_tasks(4, 0, |_| Ok::<_, ()>(0)).unwrap();
        assert!(out.is_empty());
    }
}
