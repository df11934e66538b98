//! Order-preserving data-parallel helpers.
//!
//! With the `parallel` feature these run on rayon; without it, or when a
//! caller asks for sequential execution, they fall back to plain iterators.
//! Results always come back in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// True when this build can run work in parallel.
pub const PARALLEL: bool = cfg!(feature = "parallel");

/// Maps `f` over `items`, keeping input order in the output.
pub fn map_ordered<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel && items.len() > 1 {
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Runs `op` inside a pool of `width` workers. Width 1, or a build without
/// the `parallel` feature, runs `op` on the calling thread.
pub fn with_width<R, F>(width: usize, op: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if width > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(width).build() {
            Ok(pool) => return pool.install(op),
            Err(_) => return op(),
        }
    }
    let _ = width;
    op()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_both_ways() {
        let items: Vec<u32> = (0..1000).collect();
        let seq = map_ordered(&items, false, |x| x * 2);
        let par = with_width(4, || map_ordered(&items, true, |x| x * 2));
        assert_eq!(seq, par);
        assert_eq!(seq[999], 1998);
    }
}
