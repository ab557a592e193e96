//! Reductions whose result does not depend on the number of worker threads.
//!
//! Inputs are cut into fixed-size chunks, each chunk is summed left to right
//! (chunks may run in parallel), and the chunk partials are combined by a
//! pairwise tree whose shape depends only on the input length.

use rayon::prelude::*;

const CHUNK: usize = 512;

fn tree_sum<T: Copy>(mut parts: Vec<T>, zero: T, add: impl Fn(T, T) -> T) -> T {
    if parts.is_empty() {
        return zero;
    }
    while parts.len() > 1 {
        let next = parts
            .chunks(2)
            .map(|p| if p.len() == 2 { add(p[0], p[1]) } else { p[0] })
            .collect();
        parts = next;
    }
    parts[0]
}

/// Deterministic sum of `f(i)` for `i in 0..n`.
pub fn sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * CHUNK).min(n);
            (c * CHUNK..end).fold(0.0, |acc, i| acc + f(i))
        })
        .collect();
    tree_sum(parts, 0.0, |a, b| a + b)
}

/// Deterministic componentwise sum of `f(i)` for `i in 0..n`.
pub fn sum_array_by<const K: usize, F>(n: usize, f: F) -> [f64; K]
where
    F: Fn(usize) -> [f64; K] + Sync,
{
    let add = |mut a: [f64; K], b: [f64; K]| {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
        a
    };
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<[f64; K]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * CHUNK).min(n);
            (c * CHUNK..end).fold([0.0; K], |acc, i| add(acc, f(i)))
        })
        .collect();
    tree_sum(parts, [0.0; K], add)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum_by(a.len(), |i| a[i] * b[i])
}

pub fn sum(a: &[f64]) -> f64 {
    sum_by(a.len(), |i| a[i])
}
