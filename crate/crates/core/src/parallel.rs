//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these fan out over the rayon pool;
//! without it they run sequentially. Results are always collected in input
//! order, so both builds produce identical numbers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over mutable `items`, preserving order.
pub fn map_mut<T, U, F>(items: &mut [T], f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(&mut T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().map(f).collect()
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over pairs of mutable items and shared inputs, preserving order.
pub fn zip_mut<T, A, U, F>(items: &mut [T], inputs: &[A], f: F) -> Vec<U>
where
    T: Send,
    A: Sync,
    U: Send,
    F: Fn(&mut T, &A) -> U + Sync + Send,
{
    assert_eq!(items.len(), inputs.len(), "zip_mut length mismatch");
    #[cfg(feature = "parallel")]
    {
        items
            .par_iter_mut()
            .zip(inputs.par_iter())
            .map(|(t, a)| f(t, a))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items
            .iter_mut()
            .zip(inputs.iter())
            .map(|(t, a)| f(t, a))
            .collect()
    }
}

/// Number of worker threads that [`map`] and friends can use.
pub fn workers() -> usize {
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
    fn preserves_order() {
        let xs: Vec<usize> = (0..100).collect();
        assert_eq!(map(&xs, |x| x * 2), (0..100).map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(map_range(5, |i| i + 1), vec![1, 2, 3, 4, 5]);
        let mut ys = vec![1, 2, 3];
        let out = zip_mut(&mut ys, &[10, 20, 30], |y, a| {
            *y += a;
            *y
        });
        assert_eq!(out, vec![11, 22, 33]);
    }
}
