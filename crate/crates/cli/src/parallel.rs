//! Thread-pool setup and an order-preserving parallel map.

use rayon::prelude::*;

use crate::CliError;

/// Caps the number of worker threads.
pub const THREADS_ENV: &str = "LOCBAYES_THREADS";

/// Configures the global pool from [`THREADS_ENV`]; unset means one thread
/// per core.
pub fn init_from_env() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, found `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

/// `items.map(f)` in parallel; results keep the input order, so reductions
/// over them are reproducible whatever the thread count.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.par_iter().map(f).collect()
}
