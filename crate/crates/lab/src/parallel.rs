//! Rayon fan-out over path indices. Results come back in index order, so
//! the output never depends on the thread count.

use rayon::prelude::*;

use nullctl_core::statlab::{run_path, EnsembleConfig, EnsembleResult, PathSetup};

/// `f(i)` for `i in 0..n`, evaluated in parallel, collected in order.
pub fn map_indices<T: Send>(n: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..n as u64).into_par_iter().map(f).collect()
}

/// Parallel counterpart of `statlab::run_ensemble`; identical output.
pub fn run_ensemble(setup: &PathSetup, config: &EnsembleConfig) -> nullctl_core::Result<EnsembleResult> {
    config.validate()?;
    let results = map_indices(config.n_paths, |i| (i, run_path(setup, config, i)));
    Ok(EnsembleResult::from_results(results))
}
