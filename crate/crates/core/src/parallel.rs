//! Index-ordered parallel map. With the `parallel` feature the work runs on a
//! rayon pool; without it, or with one worker, it runs sequentially. Either
//! way the output is ordered by index, so results never depend on scheduling.

/// Worker count from the machine, at least 1.
pub fn available_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// `(0..n).map(f)` on `workers` threads. `workers == 0` uses the global pool.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    use rayon::prelude::*;

    if workers == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    if workers == 0 {
        return (0..n).into_par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, _workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    (0..n).map(f).collect()
}

/// Whether this build can actually fan out.
pub const fn is_parallel_build() -> bool {
    cfg!(feature = "parallel")
}
