//! Thread-pool executor for map cells and sweep points.

use std::panic::{catch_unwind, AssertUnwindSafe};

use oscsync_core::exec::{CellFailure, Executor};
use rayon::prelude::*;

/// Runs work items on a dedicated rayon pool.
///
/// Results come back in index order and panics are reported as
/// [`CellFailure`]s (the lowest failing index wins), so output never depends
/// on the worker count or on scheduling.
pub struct Rayon {
    pool: rayon::ThreadPool,
}

impl Rayon {
    /// `workers = None` uses one worker per available core.
    pub fn new(workers: Option<usize>) -> Result<Self, rayon::ThreadPoolBuildError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            builder = builder.num_threads(n.max(1));
        }
        Ok(Rayon { pool: builder.build()? })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic with a non-string payload".to_string()
    }
}

impl Executor for Rayon {
    fn map_indexed<T, F>(&self, len: usize, f: F) -> Result<Vec<T>, CellFailure>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let results: Vec<Result<T, String>> = self.pool.install(|| {
            (0..len)
                .into_par_iter()
                .with_max_len(1)
                .map(|i| catch_unwind(AssertUnwindSafe(|| f(i))).map_err(panic_message))
                .collect()
        });
        results
            .into_iter()
            .enumerate()
            .map(|(index, r)| r.map_err(|message| CellFailure { index, message }))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_in_index_order() {
        let exec = Rayon::new(Some(3)).unwrap();
        let out = exec.map_indexed(100, |i| i * i).unwrap();
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn panics_become_failures_at_lowest_index() {
        let exec = Rayon::new(Some(2)).unwrap();
        let err = exec
            .map_indexed(50, |i| {
                if i == 17 || i == 40 {
                    panic!("boom at {i}");
                }
                i
            })
            .unwrap_err();
        assert_eq!(err.index, 17);
        assert!(err.message.contains("boom at 17"));
    }
}
