//! Linear-Gaussian state-space filtering: the Kalman filter, the bootstrap
//! particle filter and a bridge particle filter that learns a one-step policy
//! per observation from an `N^2` density-ratio estimate.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Error;
use crate::exec;
use crate::ipf::approx::{monitored_params, with_monitored};
use crate::ipf::{early_stop_check, IpfConfig, StopDecision, StopRule};
use crate::kernels::GaussianKernel;
use crate::linalg::{self, log_sum_exp, Matrix, Vector};
use crate::policy::{fit_quadratic, PolicyMode, QuadraticPolicy};
use crate::rng::{self, standard_normals};
use crate::ssb::{ess, log_mean_weight, systematic_resample};

/// `X_t = X_{t-1} + h A X_{t-1} + sqrt(h) e_t`, `Y_t = X_t + sigma v_t`,
/// `X_0 ~ N(0, I)`, with `A_ij = alpha^(|i-j|+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSsm {
    pub a: Matrix,
    pub h: f64,
    pub steps: usize,
    pub sigma_obs: f64,
}

impl LinearSsm {
    pub fn new(d: usize, alpha: f64, h: f64, steps: usize, sigma_obs: f64) -> Result<Self, Error> {
        if !(h > 0.0) || !(sigma_obs > 0.0) || d == 0 {
            return Err(Error::InvalidConfig("state-space model needs h > 0, sigma_obs > 0 and d >= 1".into()));
        }
        let a = Matrix::from_fn(d, d, |i, j| alpha.powi(i.abs_diff(j) as i32 + 1));
        Ok(Self { a, h, steps, sigma_obs })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `F = I + h A`.
    pub fn transition(&self) -> Matrix {
        Matrix::identity(self.dim(), self.dim()) + &self.a * self.h
    }

    pub fn kernel(&self) -> GaussianKernel {
        let d = self.dim();
        GaussianKernel { k: self.transition(), r: Vector::zeros(d), h: Matrix::identity(d, d) * self.h }
    }

    /// `log g(x, y)`.
    pub fn log_obs(&self, x: &[f64], y: &[f64]) -> f64 {
        crate::kernels::iso_logpdf(y, x, self.sigma_obs * self.sigma_obs)
    }

    /// Hidden states `t = 0..=T` and observations `t = 1..=T`, flat by time.
    pub fn simulate(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let f = self.transition();
        let mut r = rng::stream(seed, &[rng::SIMULATE]);
        let mut xs = alloc::vec![0.0; (self.steps + 1) * d];
        let mut ys = alloc::vec![0.0; self.steps * d];
        standard_normals(&mut r, &mut xs[..d]);
        let mut z = alloc::vec![0.0; d];
        for t in 1..=self.steps {
            let (prev, cur) = xs.split_at_mut(t * d);
            linalg::mat_vec(&f, &prev[(t - 1) * d..], &mut cur[..d]);
            standard_normals(&mut r, &mut z);
            for i in 0..d {
                cur[i] += self.h.sqrt() * z[i];
            }
            standard_normals(&mut r, &mut z);
            for i in 0..d {
                ys[(t - 1) * d + i] = cur[i] + self.sigma_obs * z[i];
            }
        }
        (xs, ys)
    }

    fn check_obs(&self, ys: &[f64]) -> Result<(), Error> {
        if ys.len() != self.steps * self.dim() {
            return Err(Error::DimensionMismatch { expected: self.steps * self.dim(), got: ys.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// Filtering means and covariances at `t = 0..=T` (weighted particle
    /// moments for the particle filters).
    pub means: Vec<Vector>,
    pub covs: Vec<Matrix>,
    /// Cumulative `log p(y_{1:t})`, `t = 0..=T`.
    pub log_likelihood: Vec<f64>,
    /// ESS before resampling at `t = 0..=T` (`N` at `t = 0`); empty for Kalman.
    pub ess: Vec<f64>,
    /// IPF iterations used at each `t = 0..=T`.
    pub iterations: Vec<usize>,
    /// Weighted particles at each `t` when requested.
    pub ensembles: Vec<Vec<f64>>,
}

impl FilterOutput {
    pub fn log_likelihood_final(&self) -> f64 {
        *self.log_likelihood.last().unwrap()
    }

    /// `ess[t] / N` for `t = 1..=T`.
    pub fn ess_fraction(&self, n: usize) -> Vec<f64> {
        self.ess.iter().skip(1).map(|e| e / n as f64).collect()
    }
}

pub fn kalman(model: &LinearSsm, ys: &[f64]) -> Result<FilterOutput, Error> {
    model.check_obs(ys)?;
    let d = model.dim();
    let f = model.transition();
    let id = Matrix::identity(d, d);
    let mut m = Vector::zeros(d);
    let mut p = id.clone();
    let mut out = FilterOutput {
        means: alloc::vec![m.clone()],
        covs: alloc::vec![p.clone()],
        log_likelihood: alloc::vec![0.0],
        ess: Vec::new(),
        iterations: alloc::vec![0; model.steps + 1],
        ensembles: Vec::new(),
    };
    let mut ll = 0.0;
    for y in ys.chunks(d) {
        m = &f * &m;
        p = linalg::symmetrize(&(&f * &p * f.transpose() + &id * model.h));
        let s = linalg::symmetrize(&(&p + &id * (model.sigma_obs * model.sigma_obs)));
        ll += linalg::gaussian_logpdf(y, &m, &s)?;
        let gain = &p * linalg::spd_inverse(&s)?;
        let innov = Vector::from_column_slice(y) - &m;
        m += &gain * innov;
        p = linalg::symmetrize(&((&id - &gain) * &p));
        out.means.push(m.clone());
        out.covs.push(p.clone());
        out.log_likelihood.push(ll);
    }
    Ok(out)
}

fn weighted_moments(xs: &[f64], d: usize, w: &[f64]) -> (Vector, Matrix) {
    let mut m = Vector::zeros(d);
    for (x, wi) in xs.chunks(d).zip(w) {
        for i in 0..d {
            m[i] += wi * x[i];
        }
    }
    let mut c = Matrix::zeros(d, d);
    for (x, wi) in xs.chunks(d).zip(w) {
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += wi * (x[i] - m[i]) * (x[j] - m[j]);
            }
        }
    }
    (m, c)
}

/// An affine Gaussian kernel prepared for sampling and for evaluating many
/// densities: `L` is the Cholesky factor of the covariance and `U` that of the
/// precision.
struct Prepared {
    kernel: GaussianKernel,
    chol: Matrix,
    prec_chol_t: Matrix,
    log_norm: f64,
}

impl Prepared {
    fn new(kernel: GaussianKernel) -> Result<Self, Error> {
        let d = kernel.dim();
        let chol = linalg::cholesky(&kernel.h)?;
        let prec = linalg::spd_inverse(&kernel.h)?;
        let prec_chol_t = linalg::cholesky(&prec)?.transpose();
        let log_norm = -0.5 * (d as f64 * (2.0 * core::f64::consts::PI).ln() + linalg::log_det_from_cholesky(&chol));
        Ok(Self { kernel, chol, prec_chol_t, log_norm })
    }

    fn mean(&self, x: &[f64], out: &mut [f64]) {
        linalg::mat_vec(&self.kernel.k, x, out);
        for (o, r) in out.iter_mut().zip(self.kernel.r.iter()) {
            *o += r;
        }
    }

    fn sample(&self, x: &[f64], rng: &mut rng::StreamRng, out: &mut [f64]) {
        let d = x.len();
        self.mean(x, out);
        let mut z = alloc::vec![0.0; d];
        standard_normals(rng, &mut z);
        let mut e = alloc::vec![0.0; d];
        linalg::lower_mul(&self.chol, &z, &mut e);
        for (o, ei) in out.iter_mut().zip(&e) {
            *o += ei;
        }
    }

    /// Whitened points `U' v` for each row of `vs`.
    fn whiten(&self, vs: &[f64], d: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; vs.len()];
        for (v, o) in vs.chunks(d).zip(out.chunks_mut(d)) {
            linalg::mat_vec(&self.prec_chol_t, v, o);
        }
        out
    }

    /// Whitened means of every previous particle.
    fn whitened_means(&self, prev: &[f64], d: usize) -> Vec<f64> {
        let mut means = alloc::vec![0.0; prev.len()];
        for (x, m) in prev.chunks(d).zip(means.chunks_mut(d)) {
            self.mean(x, m);
        }
        self.whiten(&means, d)
    }
}

/// `log sum_k exp(log_norm - |wy_n - wm_k|^2 / 2)` for every `n`.
fn mixture_log_density(wy: &[f64], wm: &[f64], d: usize, log_norm: f64) -> Vec<f64> {
    let n = wy.len() / d;
    exec::map(n, |i| {
        let y = &wy[i * d..(i + 1) * d];
        let terms: Vec<f64> = wm
            .chunks(d)
            .map(|m| {
                let q: f64 = y.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                log_norm - 0.5 * q
            })
            .collect();
        log_sum_exp(&terms)
    })
}

/// `log( g(X_t^n, y) sum_k f(X_{t-1}^k, X_t^n) / sum_k f^psi(X_{t-1}^k, X_t^n) )`.
fn log_ratio_estimates(model: &LinearSsm, base: &Prepared, twisted: Option<&Prepared>, prev: &[f64], cur: &[f64], y: &[f64]) -> Vec<f64> {
    let d = model.dim();
    let log_g: Vec<f64> = cur.chunks(d).map(|x| model.log_obs(x, y)).collect();
    let Some(tw) = twisted else {
        return log_g;
    };
    let num = mixture_log_density(&base.whiten(cur, d), &base.whitened_means(prev, d), d, base.log_norm);
    let den = mixture_log_density(&tw.whiten(cur, d), &tw.whitened_means(prev, d), d, tw.log_norm);
    log_g.iter().zip(num.iter().zip(&den)).map(|(g, (a, b))| g + a - b).collect()
}

fn propagate(k: &Prepared, prev: &[f64], d: usize, seed: u64, tags: &[u64]) -> Vec<f64> {
    let mut cur = alloc::vec![0.0; prev.len()];
    let mut full = tags.to_vec();
    full.push(0);
    exec::rows_mut(&mut cur, d, |n, row| {
        let mut t = full.clone();
        *t.last_mut().unwrap() = n as u64;
        let mut r = rng::stream(seed, &t);
        k.sample(&prev[n * d..(n + 1) * d], &mut r, row);
    });
    cur
}

/// The policy learned for one observation and the iterations it took.
fn learn_policy(model: &LinearSsm, base: &Prepared, prev: &[f64], y: &[f64], t: usize, cfg: &IpfConfig, seed: u64) -> Result<(QuadraticPolicy, usize), Error> {
    let d = model.dim();
    let n = prev.len() / d;
    let mut psi = QuadraticPolicy::identity(d, cfg.policy_mode);
    let mut history = alloc::vec![monitored_params(core::slice::from_ref(&psi))];
    let mut ess_trace = Vec::new();
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        let tw = Prepared::new(base.kernel.exact_twist(&psi)?.0)?;
        let cur = propagate(&tw, prev, d, seed, &[rng::IPF_SAMPLE, t as u64, it as u64]);
        let lr = log_ratio_estimates(model, base, (!psi.is_identity()).then_some(&tw), prev, &cur, y);
        if let StopRule::Ess { target, min_gain, patience } = cfg.stop {
            let e = ess(&lr).unwrap_or(0.0);
            ess_trace.push(e);
            let stalled = ess_trace.len() > patience && e - ess_trace[ess_trace.len() - 1 - patience] < min_gain * n as f64;
            if e >= target * n as f64 || stalled {
                break;
            }
        }
        let (xs, vals): (Vec<f64>, Vec<f64>) = {
            let keep: Vec<usize> = (0..n).filter(|&i| lr[i].is_finite()).collect();
            (keep.iter().flat_map(|&i| cur[i * d..(i + 1) * d].iter().copied()).collect(), keep.iter().map(|&i| lr[i]).collect())
        };
        let phi = fit_quadratic(&xs, d, &vals, cfg.policy_mode, cfg.ridge)?;
        psi = psi.multiply(&phi);
        psi.clamp_integrable(model.h);
        iterations = it + 1;
        history.push(monitored_params(core::slice::from_ref(&psi)));
        if let StopRule::EarlyStop(es) = cfg.stop {
            if let StopDecision::Stop(means) = early_stop_check(&history, es.window_cap, es.min_iters, es.alpha, es.bh) {
                psi = with_monitored(core::slice::from_ref(&psi), &means)?.remove(0);
                psi.clamp_integrable(model.h);
                break;
            }
        }
    }
    Ok((psi, iterations))
}

fn particle_filter(model: &LinearSsm, ys: &[f64], n: usize, ipf: Option<&IpfConfig>, keep: bool, seed: u64) -> Result<FilterOutput, Error> {
    model.check_obs(ys)?;
    if n == 0 {
        return Err(Error::InvalidConfig("particle count must be positive".into()));
    }
    if let Some(cfg) = ipf {
        cfg.validate()?;
    }
    let d = model.dim();
    let base = Prepared::new(model.kernel())?;
    let mut x = alloc::vec![0.0; n * d];
    exec::rows_mut(&mut x, d, |i, row| {
        let mut r = rng::stream(seed, &[rng::INIT, i as u64]);
        standard_normals(&mut r, row);
    });
    let uniform = alloc::vec![1.0 / n as f64; n];
    let (m0, c0) = weighted_moments(&x, d, &uniform);
    let mut out = FilterOutput {
        means: alloc::vec![m0],
        covs: alloc::vec![c0],
        log_likelihood: alloc::vec![0.0],
        ess: alloc::vec![n as f64],
        iterations: alloc::vec![0],
        ensembles: Vec::new(),
    };
    if keep {
        out.ensembles.push(x.clone());
    }
    let mut ll = 0.0;
    for (t, y) in (1..).zip(ys.chunks(d)) {
        let (psi, iters) = match ipf {
            Some(cfg) if cfg.max_iters > 0 => learn_policy(model, &base, &x, y, t, cfg, seed)?,
            _ => (QuadraticPolicy::identity(d, PolicyMode::Full), 0),
        };
        let twisted = if psi.is_identity() { None } else { Some(Prepared::new(base.kernel.exact_twist(&psi)?.0)?) };
        let cur = propagate(twisted.as_ref().unwrap_or(&base), &x, d, seed, &[rng::PROPAGATE, t as u64]);
        let lw = log_ratio_estimates(model, &base, twisted.as_ref(), &x, &cur, y);
        let e = ess(&lw).map_err(|_| Error::DegenerateWeights { t })?;
        ll += log_mean_weight(&lw);
        let w = crate::ssb::normalized(&lw)?;
        let (m, c) = weighted_moments(&cur, d, &w);
        out.means.push(m);
        out.covs.push(c);
        out.ess.push(e);
        out.log_likelihood.push(ll);
        out.iterations.push(iters);
        if keep {
            out.ensembles.push(cur.clone());
        }
        let mut r = rng::stream(seed, &[rng::RESAMPLE, t as u64]);
        let idx = systematic_resample(&lw, &mut r)?;
        x = idx.iter().flat_map(|&a| cur[a * d..(a + 1) * d].iter().copied()).collect();
    }
    Ok(out)
}

/// Bootstrap particle filter with systematic resampling at every step.
pub fn bootstrap_pf(model: &LinearSsm, ys: &[f64], n: usize, seed: u64) -> Result<FilterOutput, Error> {
    particle_filter(model, ys, n, None, false, seed)
}

/// Bridge particle filter: at each observation the transition is twisted by a
/// quadratic policy learned by one-step IPF, with the bridge ratio at each new
/// particle estimated by `g(x, y) sum_k f(x_k, x) / sum_k f^psi(x_k, x)`.
pub fn sbpf(model: &LinearSsm, ys: &[f64], n: usize, cfg: &IpfConfig, seed: u64) -> Result<FilterOutput, Error> {
    particle_filter(model, ys, n, Some(cfg), false, seed)
}

/// Either filter, keeping every weighted ensemble.
pub fn particle_filter_with_ensembles(model: &LinearSsm, ys: &[f64], n: usize, cfg: Option<&IpfConfig>, seed: u64) -> Result<FilterOutput, Error> {
    particle_filter(model, ys, n, cfg, true, seed)
}

/// The policy `sbpf` learns for the first observation.
pub fn sbpf_first_policy(model: &LinearSsm, ys: &[f64], n: usize, cfg: &IpfConfig, seed: u64) -> Result<QuadraticPolicy, Error> {
    model.check_obs(ys)?;
    let d = model.dim();
    let base = Prepared::new(model.kernel())?;
    let mut x = alloc::vec![0.0; n * d];
    exec::rows_mut(&mut x, d, |i, row| {
        let mut r = rng::stream(seed, &[rng::INIT, i as u64]);
        standard_normals(&mut r, row);
    });
    Ok(learn_policy(model, &base, &x, &ys[..d], 1, cfg, seed)?.0)
}
