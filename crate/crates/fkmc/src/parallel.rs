//! Replicate-level parallelism. The parallel and sequential paths produce
//! identical output vectors because work item i writes only slot i and each
//! item owns its random stream; the feature flag changes scheduling, nothing
//! else.

/// Map f over 0..count into a Vec, in parallel when the `parallel` feature
/// is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(count, f)
}

/// Always-sequential variant, kept compiled under every feature combination
/// so the two paths can be compared (tests, benches).
pub fn map_indexed_seq<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Run f under a rayon pool of the given size; None means the global pool
/// (machine parallelism). Without the `parallel` feature the thread count is
/// ignored and f just runs.
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        None => f(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .expect("thread pool")
            .install(f),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send>(_threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| {
            let mut s = crate::rng::SeedSpec::new(9, i as u64).stream();
            s.next_f64()
        };
        let a = map_indexed(64, f);
        let b = map_indexed_seq(64, f);
        assert_eq!(a, b);
    }

    #[test]
    fn pool_size_does_not_change_results() {
        let run = || map_indexed(32, |i| i * i);
        let base = run();
        for t in [1usize, 2, 4] {
            let got = with_threads(Some(t), run);
            assert_eq!(got, base);
        }
    }
}
