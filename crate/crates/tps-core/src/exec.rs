//! Data-parallel execution helpers.
//!
//! Batch encoding, dataset generation and gradient accumulation are
//! embarrassingly parallel over samples. With the `parallel` feature
//! (default) these helpers fan out over rayon; without it they run
//! sequentially. The sequential versions stay compiled either way so the
//! bench suite can compare both paths.
//!
//! Gradient-style reductions use a fixed chunk partition independent of
//! the thread count, and chunk results are combined in chunk order, so
//! results are bitwise identical across machines and scheduling.

/// Fixed number of reduction chunks. Independent of the machine's
/// parallelism so that float summation order never changes.
pub const REDUCE_CHUNKS: usize = 8;

/// Map `f` over indices `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
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
        map_indexed_seq(n, f)
    }
}

/// Sequential counterpart of [`map_indexed`].
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Split `0..n` into [`REDUCE_CHUNKS`] contiguous ranges, run `fold` over
/// each chunk into a fresh accumulator from `init`, then combine the chunk
/// accumulators in chunk order with `merge`.
pub fn chunked_reduce<A, FI, FF, FM>(n: usize, init: FI, fold: FF, merge: FM) -> A
where
    A: Send,
    FI: Fn() -> A + Sync + Send,
    FF: Fn(&mut A, usize) + Sync + Send,
    FM: Fn(&mut A, A),
{
    let ranges = chunk_ranges(n, REDUCE_CHUNKS);
    #[cfg(feature = "parallel")]
    let chunks: Vec<A> = {
        use rayon::prelude::*;
        ranges
            .into_par_iter()
            .map(|r| {
                let mut acc = init();
                for i in r {
                    fold(&mut acc, i);
                }
                acc
            })
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<A> = ranges
        .into_iter()
        .map(|r| {
            let mut acc = init();
            for i in r {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();

    let mut out = init();
    for c in chunks {
        merge(&mut out, c);
    }
    out
}

/// Sequential counterpart of [`chunked_reduce`] with identical chunking,
/// so both paths produce bitwise-equal floats.
pub fn chunked_reduce_seq<A, FI, FF, FM>(n: usize, init: FI, fold: FF, merge: FM) -> A
where
    FI: Fn() -> A,
    FF: Fn(&mut A, usize),
    FM: Fn(&mut A, A),
{
    let mut out = init();
    for r in chunk_ranges(n, REDUCE_CHUNKS) {
        let mut acc = init();
        for i in r {
            fold(&mut acc, i);
        }
        merge(&mut out, acc);
    }
    out
}

fn chunk_ranges(n: usize, chunks: usize) -> Vec<std::ops::Range<usize>> {
    let chunks = chunks.max(1);
    let base = n / chunks;
    let rem = n % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let len = base + usize::from(c < rem);
        out.push(start..start + len);
        start += len;
    }
    debug_assert_eq!(start, n);
    out
}
