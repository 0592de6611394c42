//! Execution strategy for the data-parallel inner loops (per pixel, per
//! voxel, per view).
//!
//! Every parallel map collects its results into a vector indexed by the
//! work item, and reductions happen afterwards in index order, so the
//! numerical result is identical for both strategies.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Evaluates `f(i)` for `i in 0..len`, returning results in index order.
    pub fn map_range<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..len).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..len).into_par_iter().map(f).collect(),
        }
    }

    /// Maps over a slice, returning results in slice order.
    pub fn map_slice<'a, S, T, F>(self, items: &'a [S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&'a S) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_in_order() {
        let seq = Execution::Sequential.map_range(1000, |i| i * i);
        let def = Execution::default().map_range(1000, |i| i * i);
        assert_eq!(seq, def);
        let xs: Vec<u32> = (0..57).collect();
        assert_eq!(
            Execution::Sequential.map_slice(&xs, |x| x + 1),
            Execution::default().map_slice(&xs, |x| x + 1)
        );
    }
}
