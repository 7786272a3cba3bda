//! Sequential or data-parallel execution of batch work.
//!
//! Results are always collected in batch order, so reductions performed by
//! callers are bitwise identical across execution modes and thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Runs on the rayon pool; identical to `Sequential` when the crate is
    /// built without the `parallel` feature.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// `f(0), …, f(n-1)` in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Applies `f(chunk_index, chunk)` to consecutive chunks of `data`.
    pub fn for_chunks<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
            _ => data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
        }
    }
}

/// Fixed batch layout for `total` work items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Batches {
    pub total: u64,
    pub size: u64,
}

impl Batches {
    pub fn new(total: u64, size: u64) -> Self {
        Batches { total, size: size.max(1) }
    }

    pub fn count(&self) -> usize {
        self.total.div_ceil(self.size) as usize
    }

    /// Number of items in batch `i`.
    pub fn len(&self, i: usize) -> u64 {
        let start = i as u64 * self.size;
        self.size.min(self.total.saturating_sub(start))
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Pairwise summation in a fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_keeps_order_in_both_modes() {
        let seq = Exec::Sequential.map(100, |i| i * i);
        let par = Exec::Parallel.map(100, |i| i * i);
        assert_eq!(seq, par);
    }

    #[test]
    fn batch_layout() {
        let b = Batches::new(10, 4);
        assert_eq!(b.count(), 3);
        assert_eq!((0..3).map(|i| b.len(i)).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn chunks_cover_data() {
        let mut v = vec![0usize; 37];
        Exec::Parallel.for_chunks(&mut v, 5, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(v[36], 7);
        assert_eq!(v[0], 0);
    }
}
