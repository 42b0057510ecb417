//! Index-parallel evaluation with a sequential fallback.

/// How trials are scheduled. Results never depend on this choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon's global pool, or a dedicated pool with the given worker count.
    /// Runs sequentially when the `parallel` feature is disabled.
    #[default]
    Parallel,
    Threads(usize),
}

/// Writes `f(i)` into `out[i]` for every index.
pub fn fill_indexed<F>(out: &mut [f64], exec: Execution, f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    match exec {
        Execution::Sequential => fill_sequential(out, &f),
        Execution::Parallel => fill_parallel(out, &f, None),
        Execution::Threads(n) => fill_parallel(out, &f, Some(n.max(1))),
    }
}

fn fill_sequential<F: Fn(usize) -> f64>(out: &mut [f64], f: &F) {
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}

#[cfg(feature = "parallel")]
fn fill_parallel<F>(out: &mut [f64], f: &F, threads: Option<usize>)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    use rayon::prelude::*;
    let run = |out: &mut [f64]| out.par_iter_mut().enumerate().with_min_len(64).for_each(|(i, slot)| *slot = f(i));
    match threads {
        None => run(out),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(out)),
            Err(_) => run(out),
        },
    }
}

#[cfg(not(feature = "parallel"))]
fn fill_parallel<F>(out: &mut [f64], f: &F, _threads: Option<usize>)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    fill_sequential(out, f);
}

/// Runs `f` over `items`, possibly concurrently, preserving order.
pub fn map_ordered<T, U, F>(items: &[T], exec: Execution, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match exec {
            Execution::Sequential => items.iter().map(&f).collect(),
            Execution::Parallel => items.par_iter().map(&f).collect(),
            Execution::Threads(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                Err(_) => items.par_iter().map(&f).collect(),
            },
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = exec;
        items.iter().map(&f).collect()
    }
}

/// Neumaier-compensated sum in index order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_agree() {
        let f = |i: usize| ((i as f64) * 0.37).sin();
        let mut a = vec![0.0; 10_000];
        let mut b = a.clone();
        let mut c = a.clone();
        fill_indexed(&mut a, Execution::Sequential, f);
        fill_indexed(&mut b, Execution::Parallel, f);
        fill_indexed(&mut c, Execution::Threads(3), f);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn compensation_recovers_small_terms() {
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
