//! Data-parallel helpers.
//!
//! Every batch reduction in the crate goes through [`map_chunks`], which splits
//! the work into fixed-size chunks and returns the per-chunk results in input
//! order. Callers fold those results sequentially, so the floating-point
//! summation order depends only on the chunk size and never on the number of
//! worker threads. Parallel and sequential execution are therefore
//! bit-identical.
//!
//! With the `parallel` feature the chunks run on the rayon pool; without it (or
//! after [`set_sequential`]`(true)`) they run on the calling thread.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces sequential execution at runtime even when the `parallel` feature is
/// compiled in. Used by the benches and by the equivalence tests.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// True when batch work is dispatched to the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Applies `f(chunk_index, chunk)` to consecutive chunks of `items`.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if is_parallel() && items.len() > chunk {
        use rayon::prelude::*;
        return items
            .par_chunks(chunk)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect();
    }
    items
        .chunks(chunk)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}

/// Maps every item independently, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Same as [`map`] but hands out mutable access.
pub fn map_mut<T, R, F>(items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() && items.len() > 1 {
        use rayon::prelude::*;
        return items
            .par_iter_mut()
            .enumerate()
            .map(|(i, x)| f(i, x))
            .collect();
    }
    items.iter_mut().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Adds `src` into `dst` element-wise.
#[inline]
pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_keep_input_order() {
        let xs: Vec<u32> = (0..103).collect();
        let sums = map_chunks(&xs, 10, |_, c| c.iter().sum::<u32>());
        assert_eq!(sums.len(), 11);
        assert_eq!(sums[0], 45);
        assert_eq!(sums.iter().sum::<u32>(), xs.iter().sum::<u32>());
    }

    #[test]
    fn sequential_and_parallel_sums_are_bit_identical() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        let fold = || {
            map_chunks(&xs, 7, |_, c| c.iter().sum::<f64>())
                .into_iter()
                .fold(0.0, |a, b| a + b)
        };
        let par = fold();
        set_sequential(true);
        let seq = fold();
        set_sequential(false);
        assert_eq!(par.to_bits(), seq.to_bits());
    }
}
