//! Interaction kernels and their empirical-measure aggregates.
//!
//! A pair kernel `κ(x, y)` is integrated against the empirical measure as
//! `(1/N) Σ_j κ(x^i, x^j)`; a tuple kernel `κ(x, y_1, …, y_q)` as
//! `(1/N^q) Σ_{j_1..j_q} κ(x^i, x^{j_1}, …, x^{j_q})`. Sums always run in
//! ascending particle order (lexicographic for tuples, last index fastest) and
//! include the self term, so every aggregate is a deterministic function of the
//! ensemble regardless of how particles are scheduled across threads.

use std::sync::Arc;

use super::{Ensemble, ModelError};

/// Default ceiling on the number of tuples enumerated per higher-order aggregate.
pub const DEFAULT_TUPLE_BUDGET: u64 = 1 << 26;

/// A kernel `R^d × R^d → R^k` integrated once against the empirical measure.
pub trait PairKernel: Send + Sync {
    fn out_dim(&self) -> usize;

    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// Adds `kernel(x, y_j)` into `acc` for every particle `j`, in ascending `j`.
    ///
    /// Overrides must perform the same floating-point additions in the same
    /// order as this default.
    fn accumulate(&self, x: &[f64], ens: &Ensemble, acc: &mut [f64]) {
        let mut scratch = vec![0.0; acc.len()];
        for y in ens.iter() {
            self.eval(x, y, &mut scratch);
            for (a, s) in acc.iter_mut().zip(&scratch) {
                *a += *s;
            }
        }
    }
}

/// A kernel `R^d × (R^d)^q → R^k` integrated against the `q`-fold product of
/// the empirical measure.
pub trait TupleKernel: Send + Sync {
    fn out_dim(&self) -> usize;

    fn eval(&self, x: &[f64], ys: &[&[f64]], out: &mut [f64]);

    /// Adds `kernel(x, y_{j_1}, …, y_{j_q})` into `acc` over all `N^q` tuples in
    /// lexicographic order.
    fn accumulate(&self, x: &[f64], q: usize, ens: &Ensemble, acc: &mut [f64]) {
        let n = ens.particle_count();
        let mut scratch = vec![0.0; acc.len()];
        let mut idx = vec![0usize; q];
        let mut ys: Vec<&[f64]> = vec![ens.particle(0); q];
        loop {
            self.eval(x, &ys, &mut scratch);
            for (a, s) in acc.iter_mut().zip(&scratch) {
                *a += *s;
            }
            // odometer increment, last slot fastest
            let mut slot = q;
            loop {
                if slot == 0 {
                    return;
                }
                slot -= 1;
                idx[slot] += 1;
                if idx[slot] < n {
                    ys[slot] = ens.particle(idx[slot]);
                    break;
                }
                idx[slot] = 0;
                ys[slot] = ens.particle(0);
            }
        }
    }
}

struct FnPairKernel<F> {
    out_dim: usize,
    f: F,
}

impl<F> PairKernel for FnPairKernel<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.f)(x, y, out)
    }
}

struct FnTupleKernel<F> {
    out_dim: usize,
    f: F,
}

impl<F> TupleKernel for FnTupleKernel<F>
where
    F: Fn(&[f64], &[&[f64]], &mut [f64]) + Send + Sync,
{
    fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    fn eval(&self, x: &[f64], ys: &[&[f64]], out: &mut [f64]) {
        (self.f)(x, ys, out)
    }
}

/// Wraps a closure as a shareable pair kernel with output dimension `out_dim`.
pub fn pair_kernel<F>(out_dim: usize, f: F) -> Arc<dyn PairKernel>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
{
    Arc::new(FnPairKernel { out_dim, f })
}

/// Scalar convenience: `κ(x, y)` on `d = 1` returning a single value.
pub fn scalar_pair_kernel<F>(f: F) -> Arc<dyn PairKernel>
where
    F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    pair_kernel(1, move |x, y, out| out[0] = f(x[0], y[0]))
}

pub fn tuple_kernel<F>(out_dim: usize, f: F) -> Arc<dyn TupleKernel>
where
    F: Fn(&[f64], &[&[f64]], &mut [f64]) + Send + Sync + 'static,
{
    Arc::new(FnTupleKernel { out_dim, f })
}

/// Number of tuples a `q`-fold aggregate over `n` particles enumerates, if it
/// fits in a `u64`.
pub fn tuple_count(n: usize, q: usize) -> Option<u64> {
    u32::try_from(q).ok().and_then(|q| (n as u64).checked_pow(q))
}

pub fn check_tuple_budget(n: usize, q: usize, budget: u64) -> Result<(), ModelError> {
    match tuple_count(n, q) {
        Some(c) if c <= budget => Ok(()),
        count => Err(ModelError::ResourceLimit {
            particles: n,
            order: q,
            tuples: count,
            budget,
        }),
    }
}

fn normalize(acc: &mut [f64], denom: f64) {
    for a in acc.iter_mut() {
        *a /= denom;
    }
}

/// `N^q` as a float, by repeated exact multiplication.
fn tuple_denominator(n: usize, q: usize) -> f64 {
    let n = n as f64;
    (0..q).fold(1.0, |d, _| d * n)
}

pub(crate) fn pair_aggregate_into(kernel: &dyn PairKernel, x: &[f64], ens: &Ensemble, acc: &mut [f64]) {
    acc.fill(0.0);
    kernel.accumulate(x, ens, acc);
    normalize(acc, ens.particle_count() as f64);
}

pub(crate) fn tuple_aggregate_into(
    kernel: &dyn TupleKernel,
    q: usize,
    x: &[f64],
    ens: &Ensemble,
    acc: &mut [f64],
) {
    acc.fill(0.0);
    kernel.accumulate(x, q, ens, acc);
    normalize(acc, tuple_denominator(ens.particle_count(), q));
}

/// `(1/N) Σ_j kernel(x^i, x^j)`.
pub fn aggregate_single(
    kernel: &dyn PairKernel,
    i: usize,
    ens: &Ensemble,
) -> Result<Vec<f64>, ModelError> {
    ens.check_index(i)?;
    let mut acc = vec![0.0; kernel.out_dim()];
    pair_aggregate_into(kernel, ens.particle(i), ens, &mut acc);
    Ok(acc)
}

/// One [`aggregate_single`] per kernel, in kernel order.
pub fn aggregate_multi(
    kernels: &[Arc<dyn PairKernel>],
    i: usize,
    ens: &Ensemble,
) -> Result<Vec<Vec<f64>>, ModelError> {
    if kernels.is_empty() {
        return Err(ModelError::InvalidInput("kernel list is empty".into()));
    }
    kernels
        .iter()
        .map(|k| aggregate_single(k.as_ref(), i, ens))
        .collect()
}

/// `(1/N^q) Σ_{j_1..j_q} kernel(x^i, x^{j_1}, …, x^{j_q})` under the default
/// tuple budget.
pub fn aggregate_higher(
    kernel: &dyn TupleKernel,
    q: usize,
    i: usize,
    ens: &Ensemble,
) -> Result<Vec<f64>, ModelError> {
    aggregate_higher_with_budget(kernel, q, i, ens, DEFAULT_TUPLE_BUDGET)
}

pub fn aggregate_higher_with_budget(
    kernel: &dyn TupleKernel,
    q: usize,
    i: usize,
    ens: &Ensemble,
    budget: u64,
) -> Result<Vec<f64>, ModelError> {
    if q == 0 {
        return Err(ModelError::InvalidInput("interaction order q must be at least 1".into()));
    }
    ens.check_index(i)?;
    check_tuple_budget(ens.particle_count(), q, budget)?;
    let mut acc = vec![0.0; kernel.out_dim()];
    tuple_aggregate_into(kernel, q, ens.particle(i), ens, &mut acc);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(v: &[f64]) -> Ensemble {
        Ensemble::from_scalars(v).unwrap()
    }

    #[test]
    fn single_sample_mean() {
        let k = scalar_pair_kernel(|_, y| y);
        let e = ens(&[1.0, 3.0]);
        assert_eq!(aggregate_single(k.as_ref(), 0, &e).unwrap(), vec![2.0]);
        assert_eq!(aggregate_single(k.as_ref(), 1, &e).unwrap(), vec![2.0]);
    }

    #[test]
    fn single_arctan_at_origin() {
        let k = scalar_pair_kernel(|x, y| (x + y).atan());
        assert_eq!(aggregate_single(k.as_ref(), 0, &ens(&[0.0])).unwrap(), vec![0.0]);
    }

    #[test]
    fn single_product_kernel() {
        let k = scalar_pair_kernel(|x, y| x * y);
        assert_eq!(aggregate_single(k.as_ref(), 0, &ens(&[1.0, 2.0, 3.0])).unwrap(), vec![2.0]);
    }

    #[test]
    fn single_index_out_of_range() {
        let k = scalar_pair_kernel(|_, y| y);
        let err = aggregate_single(k.as_ref(), 2, &ens(&[1.0, 3.0])).unwrap_err();
        assert!(matches!(err, ModelError::IndexOutOfRange { index: 2, count: 2 }));
    }

    #[test]
    fn multi_sum_and_difference() {
        let ks = vec![
            scalar_pair_kernel(|x, y| x + y),
            scalar_pair_kernel(|x, y| x - y),
        ];
        let out = aggregate_multi(&ks, 0, &ens(&[1.0, 3.0])).unwrap();
        assert_eq!(out, vec![vec![3.0], vec![-1.0]]);
    }

    #[test]
    fn multi_constants_and_singleton() {
        let ks = vec![scalar_pair_kernel(|_, _| 2.5), scalar_pair_kernel(|_, _| -7.0)];
        let e = ens(&[0.3, -1.1, 4.0]);
        assert_eq!(aggregate_multi(&ks, 1, &e).unwrap(), vec![vec![2.5], vec![-7.0]]);

        let k = scalar_pair_kernel(|x, y| (x * y).sin());
        let single = aggregate_single(k.as_ref(), 2, &e).unwrap();
        assert_eq!(aggregate_multi(&[k], 2, &e).unwrap(), vec![single]);
    }

    #[test]
    fn multi_rejects_empty() {
        assert!(aggregate_multi(&[], 0, &ens(&[1.0])).is_err());
    }

    #[test]
    fn higher_pairwise_sum() {
        let k = tuple_kernel(1, |_, ys, out| out[0] = ys[0][0] + ys[1][0]);
        assert_eq!(aggregate_higher(k.as_ref(), 2, 0, &ens(&[1.0, 3.0])).unwrap(), vec![4.0]);
    }

    #[test]
    fn higher_constant_kernel() {
        let k = tuple_kernel(1, |_, _, out| out[0] = 0.75);
        assert_eq!(aggregate_higher(k.as_ref(), 3, 1, &ens(&[1.0, 2.0, 5.0])).unwrap(), vec![0.75]);
    }

    #[test]
    fn higher_order_one_matches_single() {
        let f = |x: f64, y: f64| (x + y).atan() * (1.0 + y * y).sqrt();
        let pk = scalar_pair_kernel(f);
        let tk = tuple_kernel(1, move |x, ys, out| out[0] = f(x[0], ys[0][0]));
        let e = ens(&[0.1, -2.3, 0.77, 1.9, -0.4]);
        for i in 0..5 {
            assert_eq!(
                aggregate_single(pk.as_ref(), i, &e).unwrap(),
                aggregate_higher(tk.as_ref(), 1, i, &e).unwrap()
            );
        }
    }

    #[test]
    fn higher_budget_refusal() {
        let k = tuple_kernel(1, |_, _, out| out[0] = 1.0);
        let e = ens(&[0.0; 16]);
        let err = aggregate_higher_with_budget(k.as_ref(), 3, 0, &e, 1000).unwrap_err();
        assert!(matches!(err, ModelError::ResourceLimit { tuples: Some(4096), .. }));
        assert!(err.to_string().contains("override"));
        assert!(aggregate_higher_with_budget(k.as_ref(), 3, 0, &e, 4096).is_ok());
    }

    #[test]
    fn higher_rejects_zero_order() {
        let k = tuple_kernel(1, |_, _, out| out[0] = 1.0);
        assert!(aggregate_higher(k.as_ref(), 0, 0, &ens(&[1.0])).is_err());
    }
}
