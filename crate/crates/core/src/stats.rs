//! Deterministic reductions and small summary statistics.
//!
//! Parallel work is split into fixed-size chunks that do not depend on the
//! number of worker threads; chunk partials are combined by a pairwise tree
//! in index order, so results are bit-identical for any thread pool.

use rayon::prelude::*;

pub const CHUNK: usize = 4096;

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `sum_i f(x_i)` with fixed chunking.
pub fn par_map_sum<F>(xs: &[f64], f: F) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    let partials: Vec<f64> = xs.par_chunks(CHUNK).map(|c| c.iter().map(|&x| f(x)).sum::<f64>()).collect();
    pairwise_sum(&partials)
}

/// Maximum of `f(x_i)`; order-independent, so no chunking subtleties.
pub fn par_map_max<F>(xs: &[f64], f: F) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    xs.par_iter().map(|&x| f(x)).reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Evaluates `f(0..n)` in parallel, preserving index order.
pub fn par_generate<F>(n: u64, f: F) -> Vec<f64>
where
    F: Fn(u64) -> f64 + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub var: f64,
    /// Standard error of `var`, from the fourth central moment.
    pub var_se: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len();
    let nf = n as f64;
    let mean = par_map_sum(xs, |x| x) / nf;
    let m2 = par_map_sum(xs, |x| (x - mean).powi(2)) / nf;
    let m4 = par_map_sum(xs, |x| (x - mean).powi(4)) / nf;
    let var = if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
    let var_se = ((m4 - m2 * m2).max(0.0) / nf).sqrt();
    Moments { n, mean, var, var_se }
}

/// Delete-a-group jackknife of the sample variance: estimate and standard error.
pub fn jackknife_variance(xs: &[f64], groups: usize) -> (f64, f64) {
    let groups = groups.clamp(2, xs.len().max(2));
    let full = moments(xs).var;
    let size = xs.len() / groups;
    let mut leave_out = Vec::with_capacity(groups);
    for g in 0..groups {
        let lo = g * size;
        let hi = if g + 1 == groups { xs.len() } else { lo + size };
        let rest: Vec<f64> = xs[..lo].iter().chain(&xs[hi..]).copied().collect();
        leave_out.push(moments(&rest).var);
    }
    let gf = groups as f64;
    let mean_lo = pairwise_sum(&leave_out) / gf;
    let se = ((gf - 1.0) / gf * leave_out.iter().map(|v| (v - mean_lo).powi(2)).sum::<f64>()).sqrt();
    (full, se)
}
