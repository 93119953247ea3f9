//! Deterministic data-parallel reductions.
//!
//! Sums are computed over fixed-size chunks combined in a fixed binary-tree
//! order, so the floating-point result does not depend on the number of
//! worker threads, and the `parallel` and sequential builds agree bitwise.
//! The pairwise tree also keeps rounding error at O(log n) instead of O(n).

/// Chunk width for the leaf level of the reduction tree. Fixed so that the
/// summation shape is independent of thread count.
const CHUNK: usize = 2048;

/// Pairwise sum of `f(i)` for `i` in `0..n`.
pub fn pairwise_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    {
        pairwise_sum_par(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        pairwise_sum_seq(n, f)
    }
}

/// Sequential pairwise sum; always available, used as the benchmark baseline.
pub fn pairwise_sum_seq<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = chunk_count(n);
    let sums: Vec<f64> = (0..chunks)
        .map(|c| sum_range(c * CHUNK, (c * CHUNK + CHUNK).min(n), &f))
        .collect();
    tree_fold(sums)
}

/// Parallel pairwise sum over the global rayon pool.
#[cfg(feature = "parallel")]
pub fn pairwise_sum_par<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    use rayon::prelude::*;
    let chunks = chunk_count(n);
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| sum_range(c * CHUNK, (c * CHUNK + CHUNK).min(n), &f))
        .collect();
    tree_fold(sums)
}

/// Maximum of `f(i)` for `i` in `0..n`; NaN entries are ignored unless all
/// entries are NaN. Max is exactly associative, so the parallel and
/// sequential paths agree without any tree-shape care.
pub fn max_by_value<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(&f)
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(&f).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Applies `f` to every index in `0..n` and collects results in index order.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Chunked filter-map that preserves index order: each fixed-width chunk is
/// processed independently (possibly in parallel) and the per-chunk outputs
/// are concatenated in chunk order.
pub fn filter_map_ordered<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> Option<T> + Sync + Send,
{
    let chunks = chunk_count(n);
    let collect_chunk = |c: usize| -> Vec<T> {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        (lo..hi).filter_map(&f).collect()
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Vec<T>> = {
        use rayon::prelude::*;
        (0..chunks).into_par_iter().map(collect_chunk).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Vec<T>> = (0..chunks).map(collect_chunk).collect();

    parts.into_iter().flatten().collect()
}

fn chunk_count(n: usize) -> usize {
    n.div_ceil(CHUNK)
}

/// Recursive pairwise sum of `f` over `[lo, hi)`.
fn sum_range<F>(lo: usize, hi: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let len = hi - lo;
    if len <= 8 {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        return acc;
    }
    let mid = lo + len / 2;
    sum_range(lo, mid, f) + sum_range(mid, hi, f)
}

/// Reduces leaf sums pairwise in index order: (s0+s1), (s2+s3), ... until
/// one value remains. The tree shape depends only on the leaf count.
fn tree_fold(mut sums: Vec<f64>) -> f64 {
    if sums.is_empty() {
        return 0.0;
    }
    while sums.len() > 1 {
        let mut next = Vec::with_capacity(sums.len().div_ceil(2));
        for pair in sums.chunks(2) {
            next.push(if pair.len() == 2 {
                pair[0] + pair[1]
            } else {
                pair[0]
            });
        }
        sums = next;
    }
    sums[0]
}
