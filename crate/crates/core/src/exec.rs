//! Worker-pool helpers. Work items are keyed by index and results come back
//! in index order, so outputs never depend on the number of workers.

use rayon::prelude::*;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "LOCLIM_THREADS";

/// Worker count from `LOCLIM_THREADS`, defaulting to the available
/// parallelism.
pub fn thread_count() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n >= 1 => n,
        _ => avail,
    }
}

/// Configures the global pool from the environment. Later calls are no-ops.
pub fn init_from_env() {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build_global();
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    pool.install(f)
}

/// `f(0), ..., f(count - 1)` evaluated in parallel, returned in order.
pub fn par_map<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Like [`par_map`] for fallible work; the first error in index order wins.
pub fn try_par_map<T, E, F>(count: u64, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    par_map(count, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_across_pool_sizes() {
        let a = with_threads(1, || par_map(100, |i| i * i));
        let b = with_threads(4, || par_map(100, |i| i * i));
        assert_eq!(a, b);
        assert_eq!(a[7], 49);
    }
}
