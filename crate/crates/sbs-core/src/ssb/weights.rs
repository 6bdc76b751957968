//! Importance weights: normalization, effective sample size, resampling
//! and the resulting estimators.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::Error;
use crate::kernels::{backward_logpdf, em_logpdf, EmKernel};
use crate::linalg::log_sum_exp;
use crate::policy::{PolicyMode, QuadraticPolicy};
use crate::rng::StreamRng;
use crate::targets::Path;

/// Normalized weights `W_n` from log weights.
pub fn normalized(log_w: &[f64]) -> Result<Vec<f64>, Error> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return Err(Error::AllWeightsDegenerate);
    }
    Ok(log_w.iter().map(|l| (l - lse).exp()).collect())
}

/// `(sum W_n^2)^-1`, in `[1, N]`.
pub fn ess(log_w: &[f64]) -> Result<f64, Error> {
    let w = normalized(log_w)?;
    let s: f64 = w.iter().map(|x| x * x).sum();
    Ok((1.0 / s).clamp(1.0, log_w.len() as f64))
}

/// `log((1/N) sum_n exp(log_w_n))`.
pub fn log_mean_weight(log_w: &[f64]) -> f64 {
    log_sum_exp(log_w) - (log_w.len() as f64).ln()
}

/// Systematic resampling: one uniform, `N` evenly spaced points.
pub fn systematic_resample(log_w: &[f64], rng: &mut StreamRng) -> Result<Vec<usize>, Error> {
    let w = normalized(log_w)?;
    let n = w.len();
    let u: f64 = rng.gen();
    let mut out = Vec::with_capacity(n);
    let mut cum = w[0];
    let mut k = 0;
    for i in 0..n {
        let p = (i as f64 + u) / n as f64;
        while p >= cum && k + 1 < n {
            k += 1;
            cum += w[k];
        }
        out.push(k);
    }
    Ok(out)
}

/// `log gamma_t(x) + log L_{t-1}(x, x_prev) - log gamma_{t-1}(x_prev) - log M_t(x_prev, x)`
/// for the untwisted kernels; `-inf` when `gamma_t(x)` is not finite.
pub fn incremental_log_weight<P: Path + ?Sized>(path: &P, t: usize, kernel: &EmKernel, x_prev: &[f64], x: &[f64]) -> f64 {
    let lg = path.log_gamma(t, x);
    if !lg.is_finite() {
        return f64::NEG_INFINITY;
    }
    let id = QuadraticPolicy::identity(x.len(), PolicyMode::Diagonal);
    let bwd = backward_logpdf(kernel, path, t - 1, &id, x, x_prev);
    lg + bwd - path.log_gamma(t - 1, x_prev) - em_logpdf(kernel, path, t, x_prev, x)
}

/// Self-normalized estimate of `E_pi[f]`.
pub fn estimate<F: Fn(&[f64]) -> f64>(states: &[f64], d: usize, log_w: &[f64], f: F) -> Result<f64, Error> {
    let w = normalized(log_w)?;
    Ok(states.chunks(d).zip(&w).map(|(x, wi)| wi * f(x)).sum())
}

/// First index `t` with `ess(W_{1:t}) < e_k`, scanning cumulative log weights.
pub fn first_ess_breach(cumulative_log_w: &[Vec<f64>], threshold: f64) -> Option<usize> {
    cumulative_log_w.iter().position(|lw| ess(lw).map_or(true, |e| e < threshold))
}
