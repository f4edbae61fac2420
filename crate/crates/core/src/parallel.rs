//! Row-chunked execution. Per-sample work is split into fixed-size chunks;
//! with more than one worker thread the chunks run on the rayon pool. Chunk
//! boundaries do not affect per-row results, so sequential and parallel runs
//! agree exactly.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::Result;

/// Rows per chunk when more than one thread is available.
pub const CHUNK_ROWS: usize = 64;

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "KAPPA_LAB_THREADS";

/// Configures the global pool from [`THREADS_ENV`]. Returns the thread
/// count in effect. Safe to call more than once.
pub fn init_from_env() -> usize {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    rayon::current_num_threads()
}

pub(crate) fn map_row_chunks<T, F>(rows: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Range<usize>) -> Result<T> + Sync + Send,
{
    if rows == 0 {
        return Ok(Vec::new());
    }
    if rayon::current_num_threads() <= 1 || rows <= CHUNK_ROWS {
        return Ok(vec![f(0..rows)?]);
    }
    let ranges: Vec<Range<usize>> = (0..rows)
        .step_by(CHUNK_ROWS)
        .map(|s| s..(s + CHUNK_ROWS).min(rows))
        .collect();
    ranges.into_par_iter().map(&f).collect()
}
