//! Data-parallel helpers with a sequential fallback.
//!
//! Work is split into chunks whose boundaries depend only on the input length,
//! never on the thread count. Chunk results are combined left to right, so a
//! floating-point reduction gives the same bits whichever [`Execution`] ran it.

/// How batch work is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled; otherwise the same
    /// as [`Execution::Sequential`].
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Maps `f` over the index range `0..n`, preserving order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Folds fixed-size chunks of `items` independently, then merges the chunk
/// accumulators in chunk order.
pub fn fold_chunks<T, A, F, M>(
    exec: Execution,
    items: &[T],
    chunk_size: usize,
    fold: F,
    mut merge: M,
) -> Option<A>
where
    T: Sync,
    A: Send,
    F: Fn(&[T]) -> A + Sync + Send,
    M: FnMut(A, A) -> A,
{
    let chunks: Vec<&[T]> = items.chunks(chunk_size.max(1)).collect();
    let partials = map(exec, &chunks, |c| fold(c));
    let mut it = partials.into_iter();
    let first = it.next()?;
    Some(it.fold(first, &mut merge))
}
