//! Job-level data parallelism.
//!
//! Solver jobs, Monte Carlo chunks and metric evaluations are independent,
//! so they fan out over rayon when the `parallel` feature is enabled. The
//! sequential path is always available and produces the same results in the
//! same order: work is split into fixed chunks whose boundaries never depend
//! on the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run jobs concurrently.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Map `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items
            .par_iter()
            .enumerate()
            .map(|(i, item)| f(i, item))
            .collect();
    }
    let _ = exec;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}

/// Map `f` over `0..count`, preserving order.
pub fn map_range<R, F>(exec: Execution, count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..count).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..count).map(f).collect()
}

/// Like [`map`] but stops at the first error (by index order).
pub fn try_map<T, R, E, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    map(exec, items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_agree() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |i: usize, x: &u64| (i as u64) * 31 + x * x;
        assert_eq!(
            map(Execution::Sequential, &items, f),
            map(Execution::Parallel, &items, f)
        );
        assert_eq!(
            map_range(Execution::Sequential, 77, |i| i * 2),
            map_range(Execution::Parallel, 77, |i| i * 2)
        );
    }

    #[test]
    fn try_map_reports_first_error() {
        let items = [1, 2, 3, 4];
        let r: Result<Vec<i32>, usize> = try_map(Execution::Parallel, &items, |i, &x| {
            if x >= 3 {
                Err(i)
            } else {
                Ok(x)
            }
        });
        assert_eq!(r, Err(2));
    }
}
