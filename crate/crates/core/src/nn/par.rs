//! Fixed-chunk fan-out over batch samples.
//!
//! Work is split into chunks of [`CHUNK`] samples regardless of the number
//! of worker threads, and per-chunk partial results come back in chunk
//! order, so reductions over them are bit-reproducible at any worker count.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub(crate) const CHUNK: usize = 8;

/// Runs `f` on disjoint `CHUNK`-sample slices of `out` (each sample
/// `sample_len` long), passing the first sample index of the chunk.
pub(crate) fn chunks_mut<T, F>(out: &mut [f64], sample_len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> T + Sync + Send,
{
    let step = (CHUNK * sample_len).max(1);
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(step).enumerate().map(|(c, s)| f(c * CHUNK, s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(step).enumerate().map(|(c, s)| f(c * CHUNK, s)).collect()
    }
}

/// Runs `f` over sample ranges of `CHUNK` for a batch of `n`.
pub(crate) fn ranges<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let range = move |c: usize| c * CHUNK..((c + 1) * CHUNK).min(n);
    #[cfg(feature = "parallel")]
    {
        (0..n_chunks).into_par_iter().map(|c| f(range(c))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks).map(|c| f(range(c))).collect()
    }
}

/// Element-wise sum of partial buffers, in order.
pub(crate) fn sum_in_order(parts: impl IntoIterator<Item = Vec<f64>>, into: &mut [f64]) {
    for p in parts {
        for (a, b) in into.iter_mut().zip(p) {
            *a += b;
        }
    }
}
