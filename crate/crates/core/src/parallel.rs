//! Independent-task fan-out. Results always come back in input order.

/// Sequential map; the reference the parallel path must match.
pub fn map_seq<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Maps over `items` on a pool of `jobs` threads (`None` uses the global pool).
#[cfg(feature = "parallel")]
pub fn map_jobs<T, R>(items: &[T], jobs: Option<usize>, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    use rayon::prelude::*;
    match jobs {
        Some(1) => map_seq(items, f),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(|| items.par_iter().map(&f).collect()))
            .unwrap_or_else(|_| map_seq(items, &f)),
        None => items.par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_jobs<T, R>(items: &[T], _jobs: Option<usize>, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    map_seq(items, f)
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..257).collect();
        let sq = |x: &u64| x * x;
        let expect = map_seq(&xs, sq);
        for jobs in [None, Some(1), Some(3)] {
            assert_eq!(map_jobs(&xs, jobs, sq), expect);
        }
    }
}
