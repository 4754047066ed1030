//! Data-parallel helpers. With the `parallel` feature (default) these expand
//! to rayon iterators; without it they fall back to the sequential std
//! iterators. Both paths produce identical results: every parallel loop here
//! writes disjoint output chunks and never reduces across threads.

/// Pick between a rayon expression and its sequential equivalent.
#[cfg(feature = "parallel")]
macro_rules! if_rayon {
    ($rayon:expr, $seq:expr) => {
        $rayon
    };
}

#[cfg(not(feature = "parallel"))]
macro_rules! if_rayon {
    ($rayon:expr, $seq:expr) => {
        $seq
    };
}

pub(crate) use if_rayon;

#[cfg(feature = "parallel")]
pub(crate) use rayon::prelude::*;

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Map `f` over `items`, in parallel when available, preserving input order.
pub fn map_ordered<I, O, F>(items: Vec<I>, f: F) -> Vec<O>
where
    I: Send,
    O: Send,
    F: Fn(I) -> O + Send + Sync,
{
    if_rayon!(
        items.into_par_iter().map(f).collect(),
        items.into_iter().map(f).collect()
    )
}
