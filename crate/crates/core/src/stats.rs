//! Log-densities and samplers in the parameterizations used throughout the
//! crate: normals by variance or precision, gammas by shape/rate.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// log N(x; mean, variance)
#[inline]
pub fn ln_normal_var(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln() + d * d / variance)
}

/// log N(x; mean, 1/precision)
#[inline]
pub fn ln_normal_prec(x: f64, mean: f64, precision: f64) -> f64 {
    let d = x - mean;
    0.5 * (precision.ln() - LN_2PI - precision * d * d)
}

/// log Gamma(x; shape, rate)
#[inline]
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// log InvGamma(x; shape, scale); `scale` is the rate of the reciprocal.
#[inline]
pub fn ln_inv_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

#[inline]
pub fn ln_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
}

pub fn sample_gamma<R: Rng + ?Sized>(
    rng: &mut R,
    shape: f64,
    rate: f64,
    block: &'static str,
) -> Result<f64> {
    if !(shape.is_finite() && rate.is_finite() && shape > 0.0 && rate > 0.0) {
        return Err(Error::NonFinite { block });
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|_| Error::NonFinite { block })?;
    let x: f64 = g.sample(rng);
    Ok(x.max(f64::MIN_POSITIVE))
}

pub fn sample_inv_gamma<R: Rng + ?Sized>(
    rng: &mut R,
    shape: f64,
    scale: f64,
    block: &'static str,
) -> Result<f64> {
    let g = sample_gamma(rng, shape, scale, block)?;
    let v = 1.0 / g;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { block })
    }
}

pub fn sample_normal_prec<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    precision: f64,
    block: &'static str,
) -> Result<f64> {
    if !(mean.is_finite() && precision.is_finite() && precision > 0.0) {
        return Err(Error::NonFinite { block });
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(mean + z / precision.sqrt())
}

/// Symmetric-or-not Dirichlet via normalized gammas; every weight is kept
/// strictly positive.
pub fn sample_dirichlet<R: Rng + ?Sized>(
    rng: &mut R,
    alphas: &[f64],
    block: &'static str,
) -> Result<Vec<f64>> {
    let mut w = Vec::with_capacity(alphas.len());
    for &a in alphas {
        w.push(sample_gamma(rng, a, 1.0, block)?);
    }
    let total: f64 = w.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::NonFinite { block });
    }
    for x in &mut w {
        *x /= total;
    }
    renormalize(&mut w);
    Ok(w)
}

/// Draws an index with probability proportional to exp(log_weights).
pub fn sample_log_categorical<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> usize {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_weights.iter().map(|&l| (l - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &l) in log_weights.iter().enumerate() {
        u -= (l - max).exp();
        if u <= 0.0 {
            return i;
        }
    }
    log_weights.len() - 1
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Rescales a weight vector so it sums to one (to rounding) with no
/// non-positive entries.
pub fn renormalize(w: &mut [f64]) {
    for x in w.iter_mut() {
        if *x <= 0.0 {
            *x = f64::MIN_POSITIVE;
        }
    }
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
}

/// Median of an unsorted sample (average of middle pair for even counts).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}
