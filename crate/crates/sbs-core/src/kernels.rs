//! Markov kernels: affine Gaussian kernels with exact twisting, the
//! Euler-Maruyama discretization of Langevin dynamics, twisted versions of
//! the latter, the matching backward kernels, and a preconditioned MALA step.
//!
//! A twisted kernel is `M^psi(x, dy) = M(x, dy) psi(y) / M(psi)(x)`. For a
//! Gaussian kernel with covariance `h I` and a quadratic `psi` this is again
//! Gaussian, with precision `I/h + 2A`; the Taylor variants replace `psi` by
//! its expansion around the current point `x`.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::Error;
use crate::linalg::{self, Matrix, Vector};
use crate::policy::{PolicyMode, QuadraticPolicy};
use crate::rng::{standard_normals, StreamRng};
use crate::targets::Path;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

const STACK_DIM: usize = 16;

/// Runs `f` on a zeroed buffer of length `d`, on the stack when `d` is small.
pub(crate) fn with_scratch<R>(d: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    if d <= STACK_DIM {
        let mut buf = [0.0; STACK_DIM];
        f(&mut buf[..d])
    } else {
        f(&mut alloc::vec![0.0; d])
    }
}

/// `M(x, .) = N(K x + r, H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub k: Matrix,
    pub r: Vector,
    pub h: Matrix,
}

impl GaussianKernel {
    pub fn dim(&self) -> usize {
        self.r.len()
    }

    pub fn mean(&self, x: &Vector) -> Vector {
        &self.k * x + &self.r
    }

    pub fn logpdf(&self, x_prev: &Vector, x: &Vector) -> Result<f64, Error> {
        linalg::gaussian_logpdf(x.as_slice(), &self.mean(x_prev), &self.h)
    }

    /// Moments after one step from `N(mean, cov)`.
    pub fn push_forward(&self, mean: &Vector, cov: &Matrix) -> (Vector, Matrix) {
        (self.mean(mean), linalg::symmetrize(&(&self.k * cov * self.k.transpose() + &self.h)))
    }

    /// Twisted kernel `M^psi` and `M(psi)` as a quadratic in the previous state.
    pub fn exact_twist(&self, psi: &QuadraticPolicy) -> Result<(GaussianKernel, QuadraticPolicy), Error> {
        exact_twist(self, psi)
    }
}

/// Exact twisting of an affine Gaussian kernel by a quadratic policy.
///
/// Returns `(K', r', H')` with `H' = (H^-1 + 2A)^-1`, `K' = H' H^-1 K`,
/// `r' = H'(H^-1 r - b)`, together with the policy whose `log psi` equals
/// `log M(psi)(x)`.
pub fn exact_twist(kernel: &GaussianKernel, psi: &QuadraticPolicy) -> Result<(GaussianKernel, QuadraticPolicy), Error> {
    let d = kernel.dim();
    if psi.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: psi.dim() });
    }
    let hi = linalg::spd_inverse(&kernel.h)?;
    let a = psi.a_matrix();
    let b = Vector::from_row_slice(psi.b());
    let prec = linalg::symmetrize(&(&hi + &a * 2.0));
    let prec_chol = linalg::cholesky(&prec).map_err(|_| Error::TwistNotIntegrable)?;
    let h_new = linalg::spd_inverse(&prec).map_err(|_| Error::TwistNotIntegrable)?;
    let k_new = &h_new * &hi * &kernel.k;
    let r_new = &h_new * (&hi * &kernel.r - &b);

    let g = linalg::symmetrize(&(&hi - &hi * &h_new * &hi));
    let gv = &hi * &h_new * &b;
    let a_norm = linalg::symmetrize(&(kernel.k.transpose() * &g * &kernel.k * 0.5));
    let b_norm = kernel.k.transpose() * (&g * &kernel.r + &gv);
    let logdet_hp = linalg::spd_log_det(&kernel.h)? + linalg::log_det_from_cholesky(&prec_chol);
    let c_norm = 0.5 * kernel.r.dot(&(&g * &kernel.r)) + kernel.r.dot(&gv) - 0.5 * b.dot(&(&h_new * &b))
        + psi.c()
        + 0.5 * logdet_hp;
    let twisted = GaussianKernel { k: k_new, r: r_new, h: linalg::symmetrize(&h_new) };
    Ok((twisted, QuadraticPolicy::full(&a_norm, b_norm.as_slice(), c_norm)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drift {
    /// `x + (h/2) grad log pi_t(x)`.
    Langevin,
    /// `x` (discretized Brownian motion).
    Brownian,
}

/// Drift of the backward kernels, independent of the forward reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardDrift {
    /// `x + (h/2) grad log pi_{t-1}(x)`.
    Target,
    /// `x`: exact reversal of Brownian motion when untwisted.
    Zero,
}

/// Euler-Maruyama kernel `M_t(x, .) = N(m_t(x), h I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmKernel {
    pub h: f64,
    pub drift: Drift,
    pub backward: BackwardDrift,
}

impl EmKernel {
    pub fn langevin(h: f64) -> Self {
        Self { h, drift: Drift::Langevin, backward: BackwardDrift::Target }
    }

    /// Brownian forward kernels; backward kernels still carry the target drift.
    pub fn brownian(h: f64) -> Self {
        Self { h, drift: Drift::Brownian, backward: BackwardDrift::Target }
    }

    pub fn with_backward(self, backward: BackwardDrift) -> Self {
        Self { backward, ..self }
    }

    /// Writes the mean `m_t(x)` of `M_t(x, .)`.
    pub fn mean<P: Path + ?Sized>(&self, path: &P, t: usize, x: &[f64], out: &mut [f64]) {
        match self.drift {
            Drift::Langevin => {
                path.log_gamma_grad(t, x, out);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = xi + 0.5 * self.h * *o;
                }
            }
            Drift::Brownian => out.copy_from_slice(x),
        }
    }
}

pub fn iso_logpdf(y: &[f64], mean: &[f64], var: f64) -> f64 {
    let q: f64 = y.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * (y.len() as f64 * (LN_2PI + var.ln()) + q / var)
}

pub fn em_sample<P: Path + ?Sized>(kernel: &EmKernel, path: &P, t: usize, x_prev: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
    kernel.mean(path, t, x_prev, out);
    let sd = kernel.h.sqrt();
    for o in out.iter_mut() {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *o += sd * z;
    }
}

pub fn em_logpdf<P: Path + ?Sized>(kernel: &EmKernel, path: &P, t: usize, x_prev: &[f64], x: &[f64]) -> f64 {
    let mut m = alloc::vec![0.0; x.len()];
    kernel.mean(path, t, x_prev, &mut m);
    iso_logpdf(x, &m, kernel.h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwistMode {
    /// Gaussian conjugacy with the kernel noise.
    Exact,
    /// First-order expansion of `log psi` around the current point.
    Taylor1,
    /// Second-order expansion; falls back to first order when `I/h + 2A` is not positive definite.
    Taylor2,
}

#[derive(Debug, Clone)]
enum Cov {
    Iso,
    Diag { var: Vec<f64>, sd: Vec<f64> },
    Full { prec: Matrix, s: Matrix, s_chol: Matrix },
}

/// One twisted Euler-Maruyama step `M_t^psi`, prepared for a given policy.
///
/// All methods take the untwisted mean `m = m_t(x_prev)` so that callers can
/// reuse it across sampling, density and normalizer evaluations.
#[derive(Debug, Clone)]
pub struct TwistedStep {
    h: f64,
    mode: TwistMode,
    psi: QuadraticPolicy,
    identity: bool,
    cov: Cov,
    /// `log det S`.
    log_det: f64,
    fell_back: bool,
}

impl TwistedStep {
    pub fn untwisted(h: f64, dim: usize) -> Self {
        Self {
            h,
            mode: TwistMode::Exact,
            psi: QuadraticPolicy::identity(dim, PolicyMode::Diagonal),
            identity: true,
            cov: Cov::Iso,
            log_det: dim as f64 * h.ln(),
            fell_back: false,
        }
    }

    pub fn new(h: f64, psi: &QuadraticPolicy, mode: TwistMode) -> Result<Self, Error> {
        let d = psi.dim();
        if psi.is_identity() {
            return Ok(Self::untwisted(h, d));
        }
        let base = Self {
            h,
            mode,
            psi: psi.clone(),
            identity: false,
            cov: Cov::Iso,
            log_det: d as f64 * h.ln(),
            fell_back: false,
        };
        if mode == TwistMode::Taylor1 {
            return Ok(base);
        }
        let second_order = match psi.mode() {
            PolicyMode::Diagonal => {
                let prec: Vec<f64> = psi.a_diag().iter().map(|a| 1.0 / h + 2.0 * a).collect();
                if prec.iter().all(|&p| p > 0.0 && p.is_finite()) {
                    let var: Vec<f64> = prec.iter().map(|p| 1.0 / p).collect();
                    let sd = var.iter().map(|v| v.sqrt()).collect();
                    let log_det = var.iter().map(|v| v.ln()).sum();
                    Some((Cov::Diag { var, sd }, log_det))
                } else {
                    None
                }
            }
            PolicyMode::Full => {
                let prec = linalg::symmetrize(&(Matrix::identity(d, d) / h + psi.a_matrix() * 2.0));
                match linalg::cholesky(&prec) {
                    Ok(pc) => {
                        let s = linalg::spd_inverse(&prec)?;
                        let s_chol = linalg::cholesky(&s)?;
                        let log_det = -linalg::log_det_from_cholesky(&pc);
                        Some((Cov::Full { prec, s, s_chol }, log_det))
                    }
                    Err(_) => None,
                }
            }
        };
        match (second_order, mode) {
            (Some((cov, log_det)), _) => Ok(Self { cov, log_det, ..base }),
            (None, TwistMode::Exact) => Err(Error::TwistNotIntegrable),
            (None, _) => Ok(Self { mode: TwistMode::Taylor1, fell_back: true, ..base }),
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn policy(&self) -> &QuadraticPolicy {
        &self.psi
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// Mode actually in use (after any fallback).
    pub fn mode(&self) -> TwistMode {
        self.mode
    }

    pub fn fell_back(&self) -> bool {
        self.fell_back
    }

    fn s_mul(&self, v: &[f64], out: &mut [f64]) {
        match &self.cov {
            Cov::Iso => {
                for (o, x) in out.iter_mut().zip(v) {
                    *o = self.h * x;
                }
            }
            Cov::Diag { var, .. } => {
                for ((o, x), s) in out.iter_mut().zip(v).zip(var) {
                    *o = s * x;
                }
            }
            Cov::Full { s, .. } => linalg::mat_vec(s, v, out),
        }
    }

    /// Mean of the twisted kernel.
    pub fn mean(&self, m: &[f64], x_prev: &[f64], out: &mut [f64]) {
        if self.identity {
            out.copy_from_slice(m);
            return;
        }
        let d = m.len();
        match self.mode {
            TwistMode::Taylor1 => {
                self.psi.grad_log_psi(x_prev, out);
                for i in 0..d {
                    out[i] = m[i] + self.h * out[i];
                }
            }
            TwistMode::Exact => with_scratch(d, |v| {
                let b = self.psi.b();
                for i in 0..d {
                    v[i] = m[i] / self.h - b[i];
                }
                self.s_mul(v, out);
            }),
            TwistMode::Taylor2 => with_scratch(d, |w| {
                self.psi.grad_log_psi(x_prev, w);
                for i in 0..d {
                    w[i] += (m[i] - x_prev[i]) / self.h;
                }
                self.s_mul(w, out);
                for i in 0..d {
                    out[i] += x_prev[i];
                }
            }),
        }
    }

    pub fn sample(&self, m: &[f64], x_prev: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let d = m.len();
        self.mean(m, x_prev, out);
        let mut z = alloc::vec![0.0; d];
        standard_normals(rng, &mut z);
        match (&self.cov, self.mode) {
            (_, TwistMode::Taylor1) | (Cov::Iso, _) => {
                let sd = self.h.sqrt();
                for (o, zi) in out.iter_mut().zip(&z) {
                    *o += sd * zi;
                }
            }
            (Cov::Diag { sd, .. }, _) => {
                for ((o, zi), s) in out.iter_mut().zip(&z).zip(sd) {
                    *o += s * zi;
                }
            }
            (Cov::Full { s_chol, .. }, _) => {
                let mut e = alloc::vec![0.0; d];
                linalg::lower_mul(s_chol, &z, &mut e);
                for (o, ei) in out.iter_mut().zip(&e) {
                    *o += ei;
                }
            }
        }
    }

    /// `log M^psi(x_prev, y)`.
    pub fn logpdf(&self, m: &[f64], x_prev: &[f64], y: &[f64]) -> f64 {
        let d = m.len();
        with_scratch(d, |mu| {
            self.mean(m, x_prev, mu);
            match (&self.cov, self.mode) {
                (_, TwistMode::Taylor1) | (Cov::Iso, _) => iso_logpdf(y, mu, self.h),
                (Cov::Diag { var, .. }, _) => {
                    let q: f64 = (0..d).map(|i| (y[i] - mu[i]) * (y[i] - mu[i]) / var[i]).sum();
                    -0.5 * (d as f64 * LN_2PI + self.log_det + q)
                }
                (Cov::Full { prec, .. }, _) => {
                    for i in 0..d {
                        mu[i] = y[i] - mu[i];
                    }
                    -0.5 * (d as f64 * LN_2PI + self.log_det + linalg::quad_form(prec, mu))
                }
            }
        })
    }

    fn s_quad(&self, v: &[f64]) -> f64 {
        match &self.cov {
            Cov::Iso => self.h * v.iter().map(|x| x * x).sum::<f64>(),
            Cov::Diag { var, .. } => v.iter().zip(var).map(|(x, s)| s * x * x).sum(),
            Cov::Full { s, .. } => linalg::quad_form(s, v),
        }
    }

    /// `log M(psi)(x_prev)` (exact or under the expansion in use).
    pub fn log_normalizer(&self, m: &[f64], x_prev: &[f64]) -> f64 {
        if self.identity {
            return 0.0;
        }
        let d = m.len();
        let h = self.h;
        match self.mode {
            TwistMode::Taylor1 => {
                let mut g = alloc::vec![0.0; d];
                let lp = self.psi.log_psi_grad(x_prev, &mut g);
                let mut s = lp;
                for i in 0..d {
                    s += g[i] * (m[i] - x_prev[i]) + 0.5 * h * g[i] * g[i];
                }
                s
            }
            TwistMode::Exact => {
                let b = self.psi.b();
                let v: Vec<f64> = (0..d).map(|i| m[i] / h - b[i]).collect();
                let mm: f64 = m.iter().map(|x| x * x).sum();
                -self.psi.c() + 0.5 * (self.log_det - d as f64 * h.ln()) + 0.5 * self.s_quad(&v) - 0.5 * mm / h
            }
            TwistMode::Taylor2 => {
                let mut g = alloc::vec![0.0; d];
                let lp = self.psi.log_psi_grad(x_prev, &mut g);
                let w: Vec<f64> = (0..d).map(|i| (m[i] - x_prev[i]) / h + g[i]).collect();
                let dm: f64 = (0..d).map(|i| (m[i] - x_prev[i]) * (m[i] - x_prev[i])).sum();
                lp + 0.5 * (self.log_det - d as f64 * h.ln()) + 0.5 * self.s_quad(&w) - 0.5 * dm / h
            }
        }
    }
}

pub fn taylor_twist_sample(step: &TwistedStep, m: &[f64], x_prev: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
    step.sample(m, x_prev, rng, out)
}

pub fn taylor_twist_logpdf(step: &TwistedStep, m: &[f64], x_prev: &[f64], y: &[f64]) -> f64 {
    step.logpdf(m, x_prev, y)
}

pub fn taylor_twist_log_normalizer(step: &TwistedStep, m: &[f64], x_prev: &[f64]) -> f64 {
    step.log_normalizer(m, x_prev)
}

/// Mean of the backward kernel
/// `L_{t-1}(x_t, .) = N(x_t + (h/2) grad log pi_{t-1}(x_t) - h grad log psi_t(x_t), h I)`.
/// With `BackwardDrift::Zero` the `pi_{t-1}` term is absent.
pub fn backward_mean<P: Path + ?Sized>(kernel: &EmKernel, path: &P, t_prev: usize, psi_t: &QuadraticPolicy, x_t: &[f64], out: &mut [f64]) {
    let d = x_t.len();
    let h = kernel.h;
    match kernel.backward {
        BackwardDrift::Target => {
            path.log_gamma_grad(t_prev, x_t, out);
        }
        BackwardDrift::Zero => out.iter_mut().for_each(|o| *o = 0.0),
    }
    for i in 0..d {
        out[i] = x_t[i] + 0.5 * h * out[i];
    }
    psi_t.add_scaled_grad_log_psi(x_t, -h, out);
}

pub fn backward_logpdf<P: Path + ?Sized>(kernel: &EmKernel, path: &P, t_prev: usize, psi_t: &QuadraticPolicy, x_t: &[f64], x_prev: &[f64]) -> f64 {
    let mut mean = alloc::vec![0.0; x_t.len()];
    backward_mean(kernel, path, t_prev, psi_t, x_t, &mut mean);
    iso_logpdf(x_prev, &mean, kernel.h)
}

pub fn backward_sample<P: Path + ?Sized>(
    kernel: &EmKernel,
    path: &P,
    t_prev: usize,
    psi_t: &QuadraticPolicy,
    x_t: &[f64],
    rng: &mut StreamRng,
    out: &mut [f64],
) {
    backward_mean(kernel, path, t_prev, psi_t, x_t, out);
    let sd = kernel.h.sqrt();
    for o in out.iter_mut() {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *o += sd * z;
    }
}

/// Variance floor for the MALA preconditioner.
pub const PRECOND_FLOOR: f64 = 1e-8;

/// Per-coordinate variances of a flat ensemble, floored at [`PRECOND_FLOOR`].
pub fn diag_preconditioner(xs: &[f64], d: usize) -> Vec<f64> {
    let (_, cov) = linalg::moments(xs, d);
    (0..d).map(|i| cov[(i, i)].max(PRECOND_FLOOR)).collect()
}

/// One Metropolis-adjusted Langevin step targeting `pi_t` with diagonal
/// preconditioner `precond` (variances) and step size `eps`:
/// `x' = x + (eps/2) D grad log pi_t(x) + sqrt(eps) D^1/2 z`.
///
/// Updates `x` in place and returns whether the proposal was accepted.
pub fn mala_step<P: Path + ?Sized>(path: &P, t: usize, x: &mut [f64], precond: &[f64], eps: f64, rng: &mut StreamRng) -> bool {
    if eps == 0.0 {
        return true;
    }
    let d = x.len();
    let mut g = alloc::vec![0.0; d];
    let lp = path.log_gamma_grad(t, x, &mut g);
    let mut z = alloc::vec![0.0; d];
    standard_normals(rng, &mut z);
    let prop: Vec<f64> = (0..d)
        .map(|i| x[i] + 0.5 * eps * precond[i] * g[i] + (eps * precond[i]).sqrt() * z[i])
        .collect();
    let mut g_prop = alloc::vec![0.0; d];
    let lp_prop = path.log_gamma_grad(t, &prop, &mut g_prop);
    let log_q = |to: &[f64], from: &[f64], grad: &[f64]| -> f64 {
        (0..d)
            .map(|i| {
                let r = to[i] - from[i] - 0.5 * eps * precond[i] * grad[i];
                -0.5 * r * r / (eps * precond[i])
            })
            .sum::<f64>()
    };
    let log_ratio = lp_prop - lp + log_q(x, &prop, &g_prop) - log_q(&prop, x, &g);
    let u: f64 = rng.gen();
    if log_ratio.is_finite() && u.ln() < log_ratio {
        x.copy_from_slice(&prop);
        true
    } else {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::targets::{LqgModel, Schedule};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn policy2(a: [f64; 3], b: [f64; 2], c: f64) -> QuadraticPolicy {
        QuadraticPolicy::full(&Matrix::from_row_slice(2, 2, &[a[0], a[1], a[1], a[2]]), &b, c).unwrap()
    }

    /// log int N(y; m, H) psi(y) dy on a grid (d = 2).
    fn grid_normalizer(m: &[f64], hcov: &Matrix, psi: &QuadraticPolicy) -> f64 {
        let g = linalg::Gaussian::new(Vector::from_row_slice(m), hcov.clone()).unwrap();
        let (n, half) = (600, 6.0);
        let sd = hcov[(0, 0)].max(hcov[(1, 1)]).sqrt();
        let dx = 2.0 * half * sd / n as f64;
        let mut terms = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                let y = [m[0] - half * sd + i as f64 * dx, m[1] - half * sd + j as f64 * dx];
                terms.push(g.log_pdf(&y) + psi.log_psi(&y) + 2.0 * dx.ln());
            }
        }
        linalg::log_sum_exp(&terms)
    }

    #[test]
    fn exact_twist_normalizer_matches_quadrature() {
        let kernel = GaussianKernel {
            k: Matrix::from_row_slice(2, 2, &[0.9, 0.1, -0.05, 0.8]),
            r: Vector::from_row_slice(&[0.2, -0.1]),
            h: Matrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]),
        };
        let psi = policy2([0.7, 0.2, 1.1], [0.4, -0.3], 0.25);
        let (twisted, norm) = kernel.exact_twist(&psi).unwrap();
        for x in [[0.0, 0.0], [1.0, -2.0], [-0.5, 0.7]] {
            let xv = Vector::from_row_slice(&x);
            let want = grid_normalizer(kernel.mean(&xv).as_slice(), &kernel.h, &psi);
            assert_relative_eq!(norm.log_psi(&x), want, epsilon = 1e-6);
            // twisted density = M(x, y) psi(y) / M(psi)(x)
            let y = Vector::from_row_slice(&[0.3, 0.1]);
            let lhs = twisted.logpdf(&xv, &y).unwrap();
            let rhs = kernel.logpdf(&xv, &y).unwrap() + psi.log_psi(y.as_slice()) - norm.log_psi(&x);
            assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn exact_twist_rejects_non_integrable() {
        let kernel = GaussianKernel { k: Matrix::identity(2, 2), r: Vector::zeros(2), h: Matrix::identity(2, 2) };
        let psi = policy2([-1.0, 0.0, 0.1], [0.0, 0.0], 0.0);
        assert_eq!(kernel.exact_twist(&psi).unwrap_err(), Error::TwistNotIntegrable);
        assert_eq!(TwistedStep::new(1.0, &psi, TwistMode::Exact).unwrap_err(), Error::TwistNotIntegrable);
        let fallback = TwistedStep::new(1.0, &psi, TwistMode::Taylor2).unwrap();
        assert!(fallback.fell_back());
        assert_eq!(fallback.mode(), TwistMode::Taylor1);
    }

    #[test]
    fn twisted_em_step_agrees_with_affine_twist() {
        // Brownian step from x: K = I, r = 0, H = h I.
        let h = 0.05;
        let psi = policy2([0.7, 0.2, 1.1], [0.4, -0.3], 0.25);
        let affine = GaussianKernel { k: Matrix::identity(2, 2), r: Vector::zeros(2), h: Matrix::identity(2, 2) * h };
        let (tw, norm) = affine.exact_twist(&psi).unwrap();
        let step = TwistedStep::new(h, &psi, TwistMode::Exact).unwrap();
        let x = [0.4, -1.3];
        let y = [0.5, -1.2];
        let xv = Vector::from_row_slice(&x);
        assert_relative_eq!(step.log_normalizer(&x, &x), norm.log_psi(&x), epsilon = 1e-9);
        assert_relative_eq!(step.logpdf(&x, &x, &y), tw.logpdf(&xv, &Vector::from_row_slice(&y)).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn second_order_expansion_is_exact_for_quadratics() {
        let psi = policy2([0.7, 0.2, 1.1], [0.4, -0.3], 0.25);
        for h in [0.1, 0.05, 0.025] {
            let ex = TwistedStep::new(h, &psi, TwistMode::Exact).unwrap();
            let t2 = TwistedStep::new(h, &psi, TwistMode::Taylor2).unwrap();
            let x = [0.4, -1.3];
            let m = [0.35, -1.1];
            let y = [0.3, -1.0];
            assert_relative_eq!(ex.logpdf(&m, &x, &y), t2.logpdf(&m, &x, &y), epsilon = 1e-9);
            assert_relative_eq!(ex.log_normalizer(&m, &x), t2.log_normalizer(&m, &x), epsilon = 1e-9);
        }
    }

    #[test]
    fn first_order_mean_error_is_second_order_in_h() {
        let psi = policy2([0.7, 0.2, 1.1], [0.4, -0.3], 0.25);
        let x = [0.4, -1.3];
        let hs = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let ex = TwistedStep::new(h, &psi, TwistMode::Exact).unwrap();
                let t1 = TwistedStep::new(h, &psi, TwistMode::Taylor1).unwrap();
                let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
                ex.mean(&x, &x, &mut a);
                t1.mean(&x, &x, &mut b);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.8, "order {order}");
        }
    }

    #[test]
    fn em_kernel_matches_langevin_affine_kernel() {
        let model = LqgModel::equicorrelated(2, 8.0, 0.8);
        let path = model.path(Schedule::Linear, 40).unwrap();
        let kernels = model.langevin_kernels(Schedule::Linear, 40, 0.05).unwrap();
        let em = EmKernel::langevin(0.05);
        let x = [0.3, 2.0];
        for t in [1, 17, 40] {
            let mut m = [0.0; 2];
            em.mean(&path, t, &x, &mut m);
            let want = kernels[t - 1].mean(&Vector::from_row_slice(&x));
            assert_relative_eq!(m[0], want[0], epsilon = 1e-12);
            assert_relative_eq!(m[1], want[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn mala_leaves_gaussian_invariant() {
        let model = LqgModel::equicorrelated(2, 1.0, 0.3);
        let path = model.path(Schedule::Linear, 4).unwrap();
        let (mu, sigma) = model.intermediate(1.0).unwrap();
        let target = linalg::Gaussian::new(mu.clone(), sigma.clone()).unwrap();
        let precond = [sigma[(0, 0)], sigma[(1, 1)]];
        let n = 4000;
        let mut xs = alloc::vec![0.0; n * 2];
        let mut accepted = 0;
        for (i, x) in xs.chunks_mut(2).enumerate() {
            let mut r = rng::stream(11, &[i as u64]);
            target.sample(&mut r, x);
            for _ in 0..5 {
                accepted += mala_step(&path, 4, x, &precond, 2f64.powf(-1.0 / 3.0) * 3.0, &mut r) as usize;
            }
        }
        assert!(accepted > n, "acceptance too low: {accepted}");
        // KS on the first coordinate against its marginal
        let mut v: Vec<f64> = xs.iter().step_by(2).cloned().collect();
        v.sort_by(f64::total_cmp);
        let sd = sigma[(0, 0)].sqrt();
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = crate::stats::normal_cdf((x - mu[0]) / sd);
                (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        // 1.63 / sqrt(n) is the 1% critical value
        assert!(ks < 1.63 / (n as f64).sqrt(), "ks = {ks}");
    }

    struct StdNormal;

    impl Path for StdNormal {
        fn dim(&self) -> usize {
            1
        }
        fn steps(&self) -> usize {
            1
        }
        fn lambda(&self, t: usize) -> f64 {
            t as f64
        }
        fn log_gamma(&self, _: usize, x: &[f64]) -> f64 {
            -0.5 * x[0] * x[0]
        }
        fn log_gamma_grad(&self, _: usize, x: &[f64], g: &mut [f64]) -> f64 {
            g[0] = -x[0];
            -0.5 * x[0] * x[0]
        }
        fn sample_initial(&self, rng: &mut StreamRng, out: &mut [f64]) {
            standard_normals(rng, out)
        }
    }

    fn quadrature_1d(f: impl Fn(f64) -> f64, center: f64, half: f64) -> f64 {
        // composite Simpson on [center - half, center + half]
        let n = 4000;
        let dx = 2.0 * half / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(center - half + i as f64 * dx).exp();
        }
        s * dx / 3.0
    }

    #[test]
    fn scalar_twist_halves_variance() {
        let kernel = GaussianKernel {
            k: Matrix::from_element(1, 1, 0.8),
            r: Vector::from_element(1, 0.3),
            h: Matrix::from_element(1, 1, 1.0),
        };
        let psi = QuadraticPolicy::full(&Matrix::from_element(1, 1, 0.5), &[0.0], 0.0).unwrap();
        let (tw, _) = kernel.exact_twist(&psi).unwrap();
        assert_relative_eq!(tw.h[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(tw.k[(0, 0)], 0.4, epsilon = 1e-15);
        let (same, norm) = kernel.exact_twist(&QuadraticPolicy::identity(1, PolicyMode::Full)).unwrap();
        assert_relative_eq!(same.k[(0, 0)], 0.8, epsilon = 1e-15);
        assert_relative_eq!(same.r[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(norm.log_psi(&[1.7]), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn twist_then_untwist_recovers_kernel() {
        let kernel = GaussianKernel {
            k: Matrix::from_row_slice(2, 2, &[0.9, 0.1, -0.05, 0.8]),
            r: Vector::from_row_slice(&[0.2, -0.1]),
            h: Matrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]),
        };
        let psi = policy2([0.7, 0.2, 1.1], [0.4, -0.3], 0.25);
        let neg = QuadraticPolicy::combine(&[(-1.0, &psi)]);
        let (tw, _) = kernel.exact_twist(&psi).unwrap();
        let (back, _) = tw.exact_twist(&neg).unwrap();
        assert!((&back.k - &kernel.k).abs().max() < 1e-9);
        assert!((&back.r - &kernel.r).abs().max() < 1e-9);
        assert!((&back.h - &kernel.h).abs().max() < 1e-9);
        // A positive semi-definite and nonzero: H - H' is positive definite
        assert!(linalg::cholesky(&(&kernel.h - &tw.h)).is_ok());
    }

    #[test]
    fn twisted_kernels_normalize() {
        let psi = QuadraticPolicy::full(&Matrix::from_element(1, 1, 0.6), &[-0.4], 0.3).unwrap();
        let h = 0.05;
        let x = [0.7];
        let m = [0.65];
        for mode in [TwistMode::Exact, TwistMode::Taylor1, TwistMode::Taylor2] {
            let step = TwistedStep::new(h, &psi, mode).unwrap();
            let mut mu = [0.0];
            step.mean(&m, &x, &mut mu);
            let mass = quadrature_1d(|y| step.logpdf(&m, &x, &[y]), mu[0], 12.0 * h.sqrt());
            assert_relative_eq!(mass, 1.0, epsilon = 1e-8);
        }
        let em = EmKernel::langevin(h);
        let mass = quadrature_1d(|y| em_logpdf(&em, &StdNormal, 1, &x, &[y]), x[0], 12.0 * h.sqrt());
        assert_relative_eq!(mass, 1.0, epsilon = 1e-8);
        let mass = quadrature_1d(|y| backward_logpdf(&em, &StdNormal, 0, &psi, &x, &[y]), x[0], 14.0 * h.sqrt());
        assert_relative_eq!(mass, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn first_order_twist_identity() {
        // log M^psi_bar(x, y) = log M(x, y) + log psi_bar(x, y) - log M(psi_bar)(x)
        let psi = policy2([0.7, 0.2, 1.1], [0.4, -0.3], 0.25);
        let h = 0.1;
        let step = TwistedStep::new(h, &psi, TwistMode::Taylor1).unwrap();
        let x = [0.4, -1.3];
        let m = [0.45, -1.2];
        for y in [[0.5, -1.0], [-0.2, 0.3], [1.0, 1.0]] {
            let mut g = [0.0; 2];
            let lp = psi.log_psi_grad(&x, &mut g);
            let lin = lp + g[0] * (y[0] - x[0]) + g[1] * (y[1] - x[1]);
            let rhs = iso_logpdf(&y, &m, h) + lin - step.log_normalizer(&m, &x);
            assert_relative_eq!(step.logpdf(&m, &x, &y), rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_policy_leaves_kernels_untouched() {
        let h = 0.05;
        let constant = QuadraticPolicy::diagonal(&[0.0], &[0.0], 1.3).unwrap();
        let x = [0.8];
        let m = [0.8 - 0.5 * h * 0.8];
        for mode in [TwistMode::Taylor1, TwistMode::Taylor2, TwistMode::Exact] {
            let step = TwistedStep::new(h, &constant, mode).unwrap();
            let y = [0.7];
            assert_relative_eq!(step.logpdf(&m, &x, &y), iso_logpdf(&y, &m, h), epsilon = 1e-12);
        }
        let mut mean = [0.0];
        backward_mean(&EmKernel::langevin(h), &StdNormal, 0, &constant, &x, &mut mean);
        assert_relative_eq!(mean[0], 0.8 - 0.5 * h * 0.8, epsilon = 1e-15);
        backward_mean(&EmKernel::brownian(h), &StdNormal, 0, &constant, &x, &mut mean);
        assert_relative_eq!(mean[0], 0.8 - 0.5 * h * 0.8, epsilon = 1e-15);
        backward_mean(&EmKernel::brownian(h).with_backward(BackwardDrift::Zero), &StdNormal, 0, &constant, &x, &mut mean);
        assert_eq!(mean[0], 0.8);
    }

    #[test]
    fn mala_trivial_cases() {
        let mut r = rng::stream(3, &[]);
        let mut x = [0.4];
        assert!(mala_step(&StdNormal, 0, &mut x, &[1.0], 0.0, &mut r));
        assert_eq!(x[0], 0.4);
    }

    #[test]
    fn mala_chain_targets_standard_normal() {
        let mut r = rng::stream(5, &[]);
        let n = 100_000;
        let mut x = [0.0];
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            mala_step(&StdNormal, 0, &mut x, &[1.0], 0.5, &mut r);
            v.push(x[0]);
        }
        v.sort_by(f64::total_cmp);
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = crate::stats::normal_cdf(x);
                (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "ks = {ks}");
    }

    proptest! {
        #[test]
        fn twisted_density_identity(
            pa in proptest::collection::vec(0.0f64..2.0, 3),
            pb in proptest::collection::vec(-1.0f64..1.0, 2),
            x in proptest::collection::vec(-2.0f64..2.0, 2),
            y in proptest::collection::vec(-2.0f64..2.0, 2),
            h in 0.01f64..0.5,
        ) {
            // M^psi(x, y) = M(x, y) psi(y) / M(psi)(x)
            let psi = policy2([pa[0], 0.3 * pa[1], pa[2]], [pb[0], pb[1]], 0.1);
            let step = TwistedStep::new(h, &psi, TwistMode::Exact).unwrap();
            let m = [x[0] * 0.9, x[1] + 0.1];
            let lhs = step.logpdf(&m, &x, &y);
            let rhs = iso_logpdf(&y, &m, h) + psi.log_psi(&y) - step.log_normalizer(&m, &x);
            prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + lhs.abs()));
        }
    }
}
