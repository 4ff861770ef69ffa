//! Pluggable execution of independent work items.
//!
//! Map cells are independent, so building a map is an indexed map over cells.
//! The core crate ships a sequential executor; the `oscsync` crate provides a
//! thread-pool one. Results are always returned in index order, which is what
//! makes map output independent of the worker count.

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

/// A work item that failed (panicked, for executors that can catch panics).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("work item {index} failed: {message}")]
pub struct CellFailure {
    pub index: usize,
    pub message: String,
}

pub trait Executor {
    /// Evaluates `f(0..len)` and returns the results in index order.
    fn map_indexed<T, F>(&self, len: usize, f: F) -> Result<Vec<T>, CellFailure>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_indexed<T, F>(&self, len: usize, f: F) -> Result<Vec<T>, CellFailure>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        Ok((0..len).map(f).collect())
    }
}

impl<E: Executor + ?Sized> Executor for &E {
    fn map_indexed<T, F>(&self, len: usize, f: F) -> Result<Vec<T>, CellFailure>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (**self).map_indexed(len, f)
    }
}
