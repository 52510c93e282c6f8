//! Data-parallel kernels with a sequential fallback.
//!
//! With the `parallel` feature the kernels run on the rayon pool; without it
//! (or after [`set_parallel(false)`](set_parallel)) they run on the calling
//! thread. Reductions always split the input into fixed [`CHUNK`]-sized blocks
//! and combine the partial sums in block order, so both paths give bitwise
//! identical results regardless of thread count.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Block length of every reduction and elementwise kernel.
pub const CHUNK: usize = 2048;

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enable or disable the parallel path at runtime. No effect without the
/// `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        PARALLEL.load(Ordering::Relaxed) && rayon::current_num_threads() > 1
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Sum of per-block vectors `f(range)`, each of length `width`, accumulated
/// in block order.
pub fn reduce_blocks<F>(len: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>) -> Vec<f64> + Sync + Send,
{
    let blocks = len.div_ceil(CHUNK);
    let range = |b: usize| b * CHUNK..((b + 1) * CHUNK).min(len);
    let mut total = vec![0.0; width];
    #[cfg(feature = "parallel")]
    if parallel_enabled() && blocks > 1 {
        let parts: Vec<Vec<f64>> = (0..blocks).into_par_iter().map(|b| f(range(b))).collect();
        for p in parts {
            total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
        }
        return total;
    }
    for b in 0..blocks {
        let p = f(range(b));
        total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
    }
    total
}

fn partial_sums<F>(len: usize, f: F) -> f64
where
    F: Fn(std::ops::Range<usize>) -> f64 + Sync + Send,
{
    let blocks = len.div_ceil(CHUNK);
    let range = |b: usize| b * CHUNK..((b + 1) * CHUNK).min(len);
    #[cfg(feature = "parallel")]
    if parallel_enabled() && blocks > 1 {
        let parts: Vec<f64> = (0..blocks).into_par_iter().map(|b| f(range(b))).collect();
        return parts.iter().sum();
    }
    let mut total = 0.0;
    for b in 0..blocks {
        total += f(range(b));
    }
    total
}

/// Serial dot product with four interleaved accumulators, which lets the
/// compiler vectorize it while keeping a fixed summation order.
pub fn dot_serial(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    partial_sums(a.len(), |r| dot_serial(&a[r.clone()], &b[r]))
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sum(a: &[f64]) -> f64 {
    partial_sums(a.len(), |r| a[r].iter().sum())
}

/// `Σ w_i a_i b_i`
pub fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    partial_sums(a.len(), |r| {
        w[r.clone()]
            .iter()
            .zip(&a[r.clone()])
            .zip(&b[r])
            .map(|((w, x), y)| w * x * y)
            .sum()
    })
}

/// Apply `f(offset, block)` to consecutive `CHUNK`-sized blocks of `out`.
pub fn for_each_block<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() && out.len() > CHUNK {
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(b, block)| f(b * CHUNK, block));
        return;
    }
    for (b, block) in out.chunks_mut(CHUNK).enumerate() {
        f(b * CHUNK, block);
    }
}

/// Apply `f(j, row)` to each row of a row-major `nx`-wide array.
pub fn for_each_row<F>(out: &mut [f64], nx: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() && out.len() > CHUNK {
        out.par_chunks_mut(nx)
            .enumerate()
            .for_each(|(j, row)| f(j, row));
        return;
    }
    for (j, row) in out.chunks_mut(nx).enumerate() {
        f(j, row);
    }
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for_each_block(y, |off, block| {
        for (yi, xi) in block.iter_mut().zip(&x[off..]) {
            *yi += a * xi;
        }
    });
}

pub fn scale(a: f64, x: &mut [f64]) {
    for_each_block(x, |_, block| block.iter_mut().for_each(|v| *v *= a));
}

/// Map independent jobs, keeping results in input order.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() && items.len() > 1 {
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reductions_match_between_paths() {
        let a: Vec<f64> = (0..10_007).map(|i| ((i * 37) % 101) as f64 * 0.013 - 0.4).collect();
        let b: Vec<f64> = (0..10_007).map(|i| ((i * 11) % 53) as f64 * 0.7 - 9.0).collect();
        set_parallel(true);
        let p = (dot(&a, &b), sum(&a), norm(&b));
        set_parallel(false);
        let s = (dot(&a, &b), sum(&a), norm(&b));
        set_parallel(true);
        assert_eq!(p.0.to_bits(), s.0.to_bits());
        assert_eq!(p.1.to_bits(), s.1.to_bits());
        assert_eq!(p.2.to_bits(), s.2.to_bits());
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(dot(&[], &[]), 0.0);
        assert_eq!(sum(&[]), 0.0);
        let out: Vec<usize> = map_ordered(&[] as &[u8], |i, _| i);
        assert!(out.is_empty());
    }

    #[test]
    fn map_keeps_order() {
        let items: Vec<usize> = (0..50).collect();
        let out = map_ordered(&items, |i, v| i * 100 + v);
        assert!(out.iter().enumerate().all(|(i, v)| *v == i * 101));
    }
}
