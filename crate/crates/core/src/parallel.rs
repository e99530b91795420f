//! Indexed parallel map over a fixed worker count.
//!
//! Workers pull task indices from a shared counter and write each result
//! into the slot of its index, so the output order never depends on
//! scheduling or on the number of workers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

/// Logical CPU count, falling back to 1.
pub fn default_workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Computes `f(i)` for `i in 0..len` on up to `workers` threads and returns
/// the results in index order.
pub fn par_map_indexed<T, F>(len: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(len.max(1));
    if workers == 1 {
        return (0..len).map(f).collect();
    }
    let slots: Vec<Mutex<Option<T>>> = (0..len).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= len {
                    break;
                }
                let v = f(i);
                *slots[i].lock().expect("slot poisoned") = Some(v);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot poisoned").expect("every index visited"))
        .collect()
}

/// Like [`par_map_indexed`] for fallible tasks; returns the error of the
/// lowest failing index.
pub fn try_par_map_indexed<T, E, F>(len: usize, workers: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync,
{
    par_map_indexed(len, workers, f).into_iter().collect()
}
