//! Sequential / parallel execution of chunked work.
//!
//! Work is always split into the same fixed-size chunks and the per-chunk
//! results are returned in chunk order, so reductions performed by the caller
//! over those results are bit-identical in both modes and for any number of
//! worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How chunked work is scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    /// Everything on the calling thread.
    Sequential,
    /// Chunks spread over the rayon pool.
    #[default]
    Parallel,
}

impl Execution {
    /// Applies `f` to consecutive chunks of `items` and returns the results in
    /// chunk order.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            Execution::Sequential => items
                .chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i * chunk, c))
                .collect(),
            Execution::Parallel => items
                .par_chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i * chunk, c))
                .collect(),
        }
    }

    /// Fills `out` chunk by chunk; `f` receives the chunk's starting index.
    pub fn fill_chunks<T, F>(self, out: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            Execution::Sequential => out
                .chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i * chunk, c)),
            Execution::Parallel => out
                .par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i * chunk, c)),
        }
    }
}
