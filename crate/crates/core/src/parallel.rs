//! Order-preserving parallel map over a slice.

use crate::error::Result;

/// Applies `f` to every element using up to `jobs` scoped threads. Results
/// come back in input order, so reductions over them are deterministic
/// regardless of `jobs`. The first error in input order is returned.
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    let parts: Vec<Vec<Result<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, xs)| {
                s.spawn(move || {
                    xs.iter()
                        .enumerate()
                        .map(|(i, x)| f(c * chunk + i, x))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    parts.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..37).collect();
        for jobs in [1, 2, 5, 64] {
            let out = par_map(&xs, jobs, |i, x| Ok(i as u64 * 100 + x)).unwrap();
            assert_eq!(out, xs.iter().map(|x| x * 101).collect::<Vec<_>>());
        }
    }

    #[test]
    fn first_error_wins() {
        let xs: Vec<usize> = (0..10).collect();
        let err = par_map(&xs, 3, |i, _| {
            if i >= 4 {
                Err(Error::Input(format!("bad {i}")))
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        assert_eq!(err.to_string(), Error::Input("bad 4".into()).to_string());
    }

    #[test]
    fn empty_input() {
        let xs: Vec<u8> = Vec::new();
        assert!(par_map(&xs, 4, |_, x| Ok(*x)).unwrap().is_empty());
    }
}
