//! Data-parallel loop helpers.
//!
//! Every helper produces bit-identical results in both modes: work is split
//! into independent units (rows, candidates, queries) and each unit is
//! computed by the same sequential code. With the `parallel` feature off,
//! [`Execution::Parallel`] degrades to the sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds a kernel stays on the calling thread.
pub const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Parallel only when the feature is enabled and `work` is large enough.
    pub fn for_work(work: usize) -> Self {
        if work >= PAR_THRESHOLD {
            Execution::default()
        } else {
            Execution::Sequential
        }
    }
}

/// Calls `f(row_index, row)` for each `row_len`-sized chunk of `out`.
pub fn for_each_row<F>(out: &mut [f64], row_len: usize, exec: Execution, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if row_len == 0 {
        return;
    }
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => out
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row)),
        _ => out
            .chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row)),
    }
}

/// `(0..n).map(f).collect()`, optionally across threads; order is preserved.
pub fn map_range<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        assert_eq!(
            map_range(1000, Execution::Sequential, f),
            map_range(1000, Execution::Parallel, f)
        );
        let mut a = vec![0.0; 60];
        let mut b = vec![0.0; 60];
        let fill = |i: usize, row: &mut [f64]| {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (i * 7 + j) as f64 / 3.0;
            }
        };
        for_each_row(&mut a, 6, Execution::Sequential, fill);
        for_each_row(&mut b, 6, Execution::Parallel, fill);
        assert_eq!(a, b);
    }
}
