//! Deterministic parallel reductions.
//!
//! Work is split into fixed-size chunks; per-chunk partial results are
//! computed in parallel and then combined strictly in chunk order. The
//! summation tree therefore depends only on the chunk size, never on the
//! number of worker threads, and results are bit-reproducible under any
//! `--threads` setting.

use rayon::prelude::*;

/// Chunk size used by every chunked reduction in the crate.
pub const CHUNK: usize = 1024;

/// Maps fixed-size chunks of `items` in parallel, returning the partial
/// results in chunk order. `f` receives the offset of the chunk's first item.
pub fn map_chunks<T, A, F>(items: &[T], f: F) -> Vec<A>
where
    T: Sync,
    A: Send,
    F: Fn(usize, &[T]) -> A + Sync,
{
    items
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(i, chunk)| f(i * CHUNK, chunk))
        .collect()
}

/// Chunked map followed by an in-order fold of the partials.
pub fn fold_chunks<T, A, F, M>(items: &[T], init: A, map: F, mut merge: M) -> A
where
    T: Sync,
    A: Send,
    F: Fn(usize, &[T]) -> A + Sync,
    M: FnMut(A, A) -> A,
{
    let mut acc = init;
    for part in map_chunks(items, map) {
        acc = merge(acc, part);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_is_thread_count_independent() {
        let items: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let run = || {
            fold_chunks(
                &items,
                0.0_f64,
                |_, c| c.iter().sum::<f64>(),
                |a, b| a + b,
            )
        };
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = pool1.install(run);
        let b = pool4.install(run);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
