//! Row-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch onto the rayon global
//! pool; without it they run the same closures sequentially. All callers must
//! produce identical output on either path, so closures only ever write to the
//! row slice they are handed.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(y, row)` for every `width`-sized row of `buf`.
pub(crate) fn for_each_row<T, F>(buf: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    buf.par_chunks_mut(width).enumerate().for_each(|(y, row)| f(y, row));

    #[cfg(not(feature = "parallel"))]
    buf.chunks_mut(width).enumerate().for_each(|(y, row)| f(y, row));
}

/// Maps every index in `0..n` and reduces the results. `reduce` must be
/// associative and `identity` its neutral element.
pub(crate) fn map_reduce<A, M, R>(n: usize, identity: fn() -> A, map: M, reduce: R) -> A
where
    A: Send,
    M: Fn(usize) -> A + Send + Sync,
    R: Fn(A, A) -> A + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(map).reduce(identity, reduce)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(map).fold(identity(), reduce)
    }
}

/// Applies `f` to every item, collecting results in input order.
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// True when the crate was built with the rayon path.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
