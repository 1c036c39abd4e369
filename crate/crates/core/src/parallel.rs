//! Trial-parallel execution with worker-count independent results.

use rayon::prelude::*;

/// Worker count from `LERW_WORKERS`, falling back to the available parallelism.
pub fn default_workers() -> usize {
    std::env::var("LERW_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Evaluates `f(0), ..., f(trials - 1)` on `workers` threads and returns the
/// results in trial order. Callers reduce the returned vector sequentially,
/// so floating sums never depend on scheduling.
pub fn run_trials<T, F>(trials: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if workers <= 1 || trials < 2 {
        return (0..trials).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| (0..trials).into_par_iter().map(&f).collect())
}

/// Execution settings shared by all estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exec {
    pub master_seed: u64,
    pub workers: usize,
}

impl Exec {
    pub fn new(master_seed: u64) -> Self {
        Exec { master_seed, workers: default_workers() }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }
}
