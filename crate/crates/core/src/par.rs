//! Compile-time switch between rayon and sequential iteration.
//!
//! Every parallel loop in the crate is an indexed map whose results are
//! collected in input order, so both builds produce identical output.

macro_rules! if_rayon {
    ($rayon_value:expr, $else_value:expr) => {{
        #[cfg(feature = "parallel")]
        {
            $rayon_value
        }
        #[cfg(not(feature = "parallel"))]
        {
            $else_value
        }
    }};
}

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Ordered map over a slice.
pub(crate) fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    if_rayon!(
        items.par_iter().map(f).collect(),
        items.iter().map(f).collect()
    )
}

/// Ordered map over `0..n`.
pub(crate) fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    if_rayon!(
        (0..n).into_par_iter().map(f).collect(),
        (0..n).map(f).collect()
    )
}

/// Applies `f` to consecutive mutable chunks of `data` together with the
/// chunk index.
pub(crate) fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if_rayon!(
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c))
    )
}

/// Whether this build runs loops on the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
