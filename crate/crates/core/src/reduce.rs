//! Deterministic parallel reductions.
//!
//! Node sums are accumulated per fixed-size chunk and the chunk partials are
//! combined in index order, so results are identical for any thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::C64;

/// Chunk length for parallel node reductions. Fixed so that the floating
/// point summation order never depends on the number of worker threads.
const CHUNK: usize = 1024;

/// Sums `term(i)` for `i` in `0..n` with a deterministic reduction order.
pub(crate) fn par_sum<F>(n: usize, term: F) -> C64
where
    F: Fn(usize) -> C64 + Send + Sync,
{
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let partials: Vec<C64> = starts
        .par_iter()
        .map(|&s| {
            let mut acc = C64::ZERO;
            for i in s..(s + CHUNK).min(n) {
                acc += term(i);
            }
            acc
        })
        .collect();
    partials.into_iter().sum()
}

/// Accumulates matrix contributions for `i` in `0..n` into a `rows × cols`
/// sum, chunked like [`par_sum`]. `add_into` must add item `i`'s
/// contribution to the accumulator it is handed.
pub(crate) fn par_sum_matrix<F>(n: usize, rows: usize, cols: usize, add_into: F) -> DMatrix<C64>
where
    F: Fn(&mut DMatrix<C64>, usize) + Send + Sync,
{
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let partials: Vec<DMatrix<C64>> = starts
        .par_iter()
        .map(|&s| {
            let mut acc = DMatrix::zeros(rows, cols);
            for i in s..(s + CHUNK).min(n) {
                add_into(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut total = DMatrix::zeros(rows, cols);
    for p in partials {
        total += p;
    }
    total
}

/// Applies `f` to every index in parallel and collects the results in index
/// order.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    (0..n).into_par_iter().map(f).collect()
}
