//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the hot batch loops run on rayon's
//! global pool; without it, or when a caller asks for
//! [`ExecMode::Sequential`], the same closures run on the calling thread.
//! Both paths must produce identical results for associative reductions.

/// How a batch operation is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// The mode used when callers do not choose one.
    pub fn preferred() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    #[cfg_attr(not(feature = "parallel"), allow(dead_code))]
    fn parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Maps `f` over consecutive chunks of `size` items (the last may be shorter).
pub fn map_chunks<T, R, F>(mode: ExecMode, items: &[T], size: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    assert!(size > 0, "chunk size must be positive");
    #[cfg(feature = "parallel")]
    if mode.parallel() {
        use rayon::prelude::*;
        return items.par_chunks(size).map(f).collect();
    }
    let _ = mode;
    items.chunks(size).map(f).collect()
}

/// Keeps the items for which `keep` returns `Ok(true)`, in order. The first
/// error (in item order) wins.
pub fn try_filter<T, E, F>(mode: ExecMode, items: Vec<T>, keep: F) -> Result<Vec<T>, E>
where
    T: Send + Sync,
    E: Send,
    F: Fn(&T) -> Result<bool, E> + Sync + Send,
{
    let verdicts: Vec<Result<bool, E>> = map(mode, &items, &keep);
    let mut out = Vec::with_capacity(items.len());
    for (item, verdict) in items.into_iter().zip(verdicts) {
        if verdict? {
            out.push(item);
        }
    }
    Ok(out)
}

/// Folds `items` into per-chunk accumulators and combines them with `reduce`.
/// `reduce` must be associative with `identity()` as its neutral element.
pub fn fold_reduce<T, A, Id, F, R>(mode: ExecMode, items: &[T], identity: Id, fold: F, reduce: R) -> A
where
    T: Sync,
    A: Send,
    Id: Fn() -> A + Sync + Send,
    F: Fn(A, &T) -> A + Sync + Send,
    R: Fn(A, A) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.parallel() {
        use rayon::prelude::*;
        return items
            .par_iter()
            .fold(&identity, &fold)
            .reduce(&identity, &reduce);
    }
    let _ = mode;
    let _ = &reduce;
    items.iter().fold(identity(), fold)
}
