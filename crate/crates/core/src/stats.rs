//! Small descriptive-statistics helpers shared by the reports.

use crate::real::Real;

pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().fold(T::zero(), |a, &x| a + x) / T::from_usize_lossy(xs.len())
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    let ss = xs.iter().fold(T::zero(), |a, &x| a + (x - m) * (x - m));
    (ss / T::from_usize_lossy(xs.len() - 1)).sqrt()
}

/// Linear-interpolation quantile of unsorted data; `q` in `[0, 1]`.
pub fn quantile<T: Real>(xs: &[T], q: T) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    quantile_sorted(&v, q)
}

pub fn quantile_sorted<T: Real>(v: &[T], q: T) -> T {
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let pos = q.max(T::zero()).min(T::one()) * T::from_usize_lossy(n - 1);
    let lo = pos.floor().as_f64() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - T::from_usize_lossy(lo);
    v[lo] + frac * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit<T: Real>(xs: &[T], ys: &[T]) -> Option<LinearFit<T>> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    let mut syy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx <= T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy > T::zero() { sxy * sxy / (sxx * syy) } else { T::one() };
    Some(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

/// Mean of `blocks` equal consecutive blocks and twice the standard error of
/// the block means. Leftover entries at the end are dropped.
pub fn batch_means<T: Real>(xs: &[T], blocks: usize) -> (Vec<T>, T) {
    let size = xs.len() / blocks.max(1);
    if size == 0 {
        return (Vec::new(), T::infinity());
    }
    let means: Vec<T> = xs.chunks_exact(size).take(blocks).map(mean).collect();
    let se = std_dev(&means) / T::from_usize_lossy(means.len()).sqrt();
    (means, T::lit(2.0) * se)
}
