//! Execution mode for the data-parallel inner loops.
//!
//! Every helper here produces results in input order, and each element is
//! computed by the same closure regardless of mode, so `Sequential` and
//! `Parallel` are bit-identical. Without the `parallel` feature the parallel
//! branch compiles away.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

pub fn map_slice<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Runs `f(chunk_index, chunk)` over consecutive chunks of `chunk_len`.
pub fn for_each_chunk_mut<T, F>(exec: Exec, items: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        items.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    items.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Maps each chunk of `chunk_len` items to one value, in chunk order.
pub fn map_chunks<T, R, F>(exec: Exec, items: &[T], chunk_len: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_chunks(chunk_len).enumerate().map(|(i, c)| f(i, c)).collect();
    }
    let _ = exec;
    items.chunks(chunk_len).enumerate().map(|(i, c)| f(i, c)).collect()
}
