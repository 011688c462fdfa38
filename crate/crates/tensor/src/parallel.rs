//! Data-parallel helpers. Work is split only over independent output
//! chunks, so results are identical for every thread count.

use std::sync::OnceLock;

use rayon::prelude::*;

static CONFIGURED: OnceLock<usize> = OnceLock::new();

/// Sizes the worker pool. `0` and `1` both mean strictly single-threaded.
/// Only the first call has an effect.
pub fn set_threads(n: usize) -> usize {
    *CONFIGURED.get_or_init(|| {
        let n = n.max(1);
        // A pool may already exist if rayon was used first; keep going either way.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        n
    })
}

/// Reads `LRSIM_THREADS` (unset: all cores; `0`: single-threaded).
pub fn init_from_env() -> usize {
    let n = match std::env::var("LRSIM_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    set_threads(n)
}

pub fn threads() -> usize {
    CONFIGURED.get().copied().unwrap_or_else(rayon::current_num_threads)
}

/// Runs `f(index, chunk)` over consecutive `chunk`-sized pieces of `buf`.
pub fn for_each_chunk<T: Send>(buf: &mut [T], chunk: usize, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    if chunk == 0 {
        return;
    }
    if threads() <= 1 || buf.len() <= chunk {
        buf.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        buf.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}
