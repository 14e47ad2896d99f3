//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature, [`Mode::Parallel`] runs on a rayon pool;
//! without it every mode runs sequentially. Results are always returned in
//! input order, so callers stay deterministic.

use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Mode {
    Sequential,
    /// Parallel on the global pool.
    #[default]
    Parallel,
    /// Parallel on a dedicated pool of the given size.
    Workers(usize),
}

impl Mode {
    pub fn from_workers(n: Option<usize>) -> Mode {
        match n {
            None => Mode::Parallel,
            Some(0) | Some(1) => Mode::Sequential,
            Some(n) => Mode::Workers(n),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Mode::Sequential
    }
}

/// `items.iter().map(f)` in input order.
pub fn map<T, R, F>(mode: Mode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match mode {
            Mode::Sequential => {}
            Mode::Parallel => return items.par_iter().map(f).collect(),
            Mode::Workers(n) => {
                if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    return pool.install(|| items.par_iter().map(&f).collect());
                }
            }
        }
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Applies `f` to `0..n` in chunks and returns the lowest index whose result
/// is `Some`, stopping after the first chunk that produced one.
pub fn find_first<R, F>(mode: Mode, n: usize, chunk: usize, f: F) -> Option<(usize, R)>
where
    R: Send,
    F: Fn(usize) -> Option<R> + Sync + Send,
{
    let chunk = chunk.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let results = map(mode, &idx, |&i| f(i));
        if let Some((i, r)) = results
            .into_iter()
            .enumerate()
            .find_map(|(k, r)| r.map(|r| (start + k, r)))
        {
            return Some((i, r));
        }
        start = end;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(Mode::Sequential, &xs, |x| x * x);
        let b = map(Mode::Parallel, &xs, |x| x * x);
        let c = map(Mode::Workers(2), &xs, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn first_hit_is_lowest_index() {
        for mode in [Mode::Sequential, Mode::Parallel] {
            let r = find_first(mode, 10_000, 64, |i| (i % 977 == 976).then_some(i));
            assert_eq!(r, Some((976, 976)));
        }
        assert_eq!(find_first(Mode::Parallel, 0, 8, |i| Some(i)), None);
    }
}
