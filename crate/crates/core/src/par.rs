//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run the sequential versions in [`seq`]. Every helper returns results in
//! input order and reductions are integer-valued or performed sequentially
//! after collection, so output is identical in both modes.

/// Sequential implementations, always compiled. Benchmarks compare these
/// against the dispatched versions.
pub mod seq {
    #[inline]
    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        F: Fn(usize) -> R,
    {
        (0..n).map(f).collect()
    }

    #[inline]
    pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
    where
        F: Fn(&T) -> R,
    {
        items.iter().map(f).collect()
    }

    #[inline]
    pub fn count_chunks<F>(data: &[f64], width: usize, pred: F) -> usize
    where
        F: Fn(&[f64]) -> bool,
    {
        data.chunks_exact(width).filter(|row| pred(row)).count()
    }
}

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    // Below this many rows the rayon overhead dominates.
    const MIN_PAR_ROWS: usize = 4096;

    #[inline]
    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        if rayon::current_num_threads() == 1 {
            return super::seq::map_range(n, f);
        }
        (0..n).into_par_iter().map(f).collect()
    }

    #[inline]
    pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if rayon::current_num_threads() == 1 {
            return super::seq::map_slice(items, f);
        }
        items.par_iter().map(f).collect()
    }

    #[inline]
    pub fn count_chunks<F>(data: &[f64], width: usize, pred: F) -> usize
    where
        F: Fn(&[f64]) -> bool + Sync + Send,
    {
        if data.len() / width.max(1) < MIN_PAR_ROWS || rayon::current_num_threads() == 1 {
            return super::seq::count_chunks(data, width, pred);
        }
        data.par_chunks_exact(width).filter(|row| pred(row)).count()
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    #[inline]
    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        super::seq::map_range(n, f)
    }

    #[inline]
    pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        super::seq::map_slice(items, f)
    }

    #[inline]
    pub fn count_chunks<F>(data: &[f64], width: usize, pred: F) -> usize
    where
        F: Fn(&[f64]) -> bool + Sync + Send,
    {
        super::seq::count_chunks(data, width, pred)
    }
}

pub use imp::{count_chunks, map_range, map_slice};

/// Whether the crate was built with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` inside a pool limited to `jobs` threads. Without the `parallel`
/// feature this simply calls `f`.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if let Some(jobs) = jobs.filter(|&j| j > 0) {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        f()
    }
}
