//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) independent work items run on the
//! rayon pool. Without it, or when [`Execution::Sequential`] is requested, the
//! same closures run in a plain loop. Results are always returned in index
//! order, so output never depends on the scheduler.

/// How to execute an embarrassingly parallel batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when compiled with `parallel`, otherwise sequential.
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run work in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Map `f` over `0..n`, preserving index order in the output.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}
