//! Worker pool shared by parallel fan-out sections.
//!
//! `TOKENFUSE_THREADS` caps the worker count (default: available
//! parallelism). All fan-outs reduce in a fixed index order, so results are
//! identical for any thread count.

use once_cell::sync::Lazy;
use rayon::prelude::*;

static POOL: Lazy<rayon::ThreadPool> = Lazy::new(|| {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let threads = std::env::var("TOKENFUSE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map(|n| n.min(available.max(1)))
        .unwrap_or(available);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("worker pool construction")
});

pub fn thread_count() -> usize {
    POOL.current_num_threads()
}

/// Maps over items in parallel; output order matches input order.
pub fn ordered_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    POOL.install(|| items.par_iter().map(&f).collect())
}

/// Maps over `0..n` in parallel; output order matches index order.
pub fn ordered_map_indices<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    POOL.install(|| (0..n).into_par_iter().map(&f).collect())
}
