//! Replication runner with a rayon backend and a sequential fallback.
//!
//! Every replication receives its own index, and all randomness is derived
//! from `(root seed, index)`, so results are identical whichever backend runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How independent replications are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled,
    /// otherwise runs sequentially.
    #[default]
    Parallel,
}

impl Execution {
    /// `true` when this mode actually fans out over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..reps`, preserving index order in the output.
    pub fn map<T, F>(self, reps: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return (0..reps).into_par_iter().map(f).collect();
        }
        (0..reps).map(f).collect()
    }
}
