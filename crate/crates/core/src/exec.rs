//! Ordered execution of independent per-path work.

/// Runs `f(0..count)` on up to `workers` threads and returns the results
/// in index order. Falls back to a plain loop with one worker or when the
/// `parallel` feature is off.
pub fn map_paths<T, F>(count: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers > 1 && count > 1 {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .expect("thread pool");
            return pool.install(|| (0..count).into_par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    (0..count).map(f).collect()
}

/// Whether [`map_paths`] can use more than one thread in this build.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_worker_count() {
        let want: Vec<usize> = (0..100).map(|i| i * i).collect();
        for w in [1, 2, 8] {
            assert_eq!(map_paths(100, w, |i| i * i), want);
        }
        assert!(map_paths(0, 4, |i| i).is_empty());
    }
}
