//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) work fans out over the current rayon
//! pool; without it every helper degrades to a plain sequential loop. Outputs
//! are always collected in index order so reductions stay deterministic.

use crate::Result;

/// Maps `f` over `0..len`, preserving index order in the output.
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if len > 1 && rayon::current_num_threads() > 1 {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; the first error in index order wins.
pub fn try_map_indexed<T, F>(len: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(len, f).into_iter().collect()
}

/// Runs `op` on a pool of `workers` threads. `None` uses the ambient pool.
/// A count of 1 forces the sequential path.
pub fn with_workers<R, F>(workers: Option<usize>, op: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = workers {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .expect("failed to build worker pool");
            return pool.install(op);
        }
    }
    let _ = workers;
    op()
}

/// Number of workers the helpers will currently use.
pub fn current_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_worker_count() {
        for w in [1, 2, 4] {
            let v = with_workers(Some(w), || map_indexed(100, |i| i * i));
            assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn first_error_wins() {
        let r: Result<Vec<usize>> = try_map_indexed(10, |i| {
            if i >= 3 {
                Err(crate::Error::arg(format!("bad {i}")))
            } else {
                Ok(i)
            }
        });
        assert!(r.unwrap_err().to_string().contains("bad 3"));
    }
}
