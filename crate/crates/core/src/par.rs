//! Data-parallel map over an index range.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] runs on the
//! rayon global pool; without it every policy runs sequentially. Output order
//! always follows the index, never the schedule.

use crate::error::Result;

/// How independent iterations are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Map `f` over `0..n`, collecting results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fallible map; the error with the lowest index wins so failures are
    /// reported deterministically.
    pub fn try_map<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                let results: Vec<Result<T>> = self.map(n, f);
                results.into_iter().collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }
}

/// Run `f` with parallel work confined to a pool of `threads` workers.
/// `threads = 0` uses the global pool. Without the `parallel` feature this
/// just calls `f`.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| crate::error::Error::Config(format!("thread pool: {e}")))?;
            return Ok(pool.install(f));
        }
    }
    let _ = threads;
    Ok(f())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn order_is_by_index() {
        let seq = Execution::Sequential.map(100, |i| i * i);
        let par = Execution::Parallel.map(100, |i| i * i);
        assert_eq!(seq, par);
    }

    #[test]
    fn first_error_is_reported() {
        let r = Execution::Parallel.try_map(50, |i| {
            if i % 10 == 7 {
                Err(Error::InvalidArgument(format!("{i}")))
            } else {
                Ok(i)
            }
        });
        match r {
            Err(Error::InvalidArgument(s)) => assert_eq!(s, "7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bounded_pool_preserves_results() {
        let a = with_threads(1, || Execution::Parallel.map(50, |i| i + 1)).unwrap();
        let b = with_threads(3, || Execution::Parallel.map(50, |i| i + 1)).unwrap();
        assert_eq!(a, b);
    }
}
