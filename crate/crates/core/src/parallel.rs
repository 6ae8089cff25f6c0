//! Deterministic fan-out for backend-bound work.
//!
//! Results are returned in input order regardless of which worker finished
//! first, so downstream artifacts stay byte-identical across runs and across
//! `parallelism` settings.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Applies `work` to every item, running at most `parallelism` invocations
/// concurrently, and returns the outputs in input order.
///
/// `parallelism == 0` is treated as 1. Panics in `work` propagate.
pub fn ordered_par_map<I, O, F>(items: Vec<I>, parallelism: usize, work: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync,
{
    let workers = parallelism.max(1).min(items.len().max(1));
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&work).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<O>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= items.len() {
                    break;
                }
                let output = work(&items[index]);
                *slots[index].lock().unwrap() = Some(output);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}
