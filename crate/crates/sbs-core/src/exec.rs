//! Indexed maps over particles, parallel with the `parallel` feature.
//!
//! Results are always collected in index order and any reduction happens
//! afterwards on the collected vector, so output does not depend on the
//! number of worker threads.

use alloc::vec::Vec;

const MIN_CHUNK: usize = 32;

pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().with_min_len(MIN_CHUNK).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = MIN_CHUNK;
        (0..n).map(f).collect()
    }
}

/// Calls `f(i, row_i)` on each `d`-sized row of `data`.
pub fn rows_mut<F>(data: &mut [f64], d: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(d)
            .with_min_len(MIN_CHUNK)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, row) in data.chunks_mut(d).enumerate() {
            f(i, row);
        }
    }
}

/// Like [`rows_mut`], also storing one scalar per row in `out`.
pub fn rows_mut_with<F>(data: &mut [f64], d: usize, out: &mut [f64], f: F)
where
    F: Fn(usize, &mut [f64]) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(d)
            .zip(out.par_iter_mut())
            .with_min_len(MIN_CHUNK)
            .enumerate()
            .for_each(|(i, (row, o))| *o = f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, (row, o)) in data.chunks_mut(d).zip(out.iter_mut()).enumerate() {
            *o = f(i, row);
        }
    }
}
