//! data-parallel execution helpers
//!
//! All "map over independent items, collect in order" loops in the crate go
//! through [`map_indices`]. With the `parallel` feature (default) it fans out
//! over rayon; without it the build is fully sequential. Results are
//! collected in index order and reduced sequentially by callers, so both
//! paths are bit-identical.
//!
//! [`map_indices_seq`] is always compiled; the bench suite uses it as the
//! baseline when comparing the two execution strategies.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`map_indices`].
pub fn map_indices_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Fallible map over `0..n`; first error wins (lowest index under the
/// sequential build, some failing index under rayon — callers only rely on
/// "an error surfaces").
pub fn try_map_indices<T, F, E>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
