//! Data-parallel map used by the bound phase, Monte Carlo rollouts and
//! direction sweeps.
//!
//! With the `parallel` feature the map runs on the current rayon pool when
//! the caller asks for it; otherwise (or when the feature is compiled out)
//! it is a plain sequential iterator. Output order always matches input
//! order, so results never depend on the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, in parallel when `parallel` is set and the crate was
/// built with the `parallel` feature.
pub fn map<T, R, F>(parallel: bool, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel && items.len() > 1 {
            return items.par_iter().map(f).collect();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Map over `0..n`, same contract as [`map`].
pub fn map_range<R, F>(parallel: bool, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel && n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    (0..n).map(f).collect()
}

/// True when the crate was compiled with rayon support.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
