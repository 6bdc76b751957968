//! Annealing paths and the models they interpolate.
//!
//! A path is `gamma_t(x) = pi_0(x) exp(lambda_t l(x))`, the geometric
//! interpolation between a normalized base `pi_0` and the unnormalized
//! target `gamma = pi_0 exp(l)`; in particular `Z_0 = 1`.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::Error;
use crate::kernels::GaussianKernel;
use crate::linalg::{self, Gaussian, Matrix, Vector};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Linear,
    Quadratic,
}

impl Schedule {
    /// `lambda_t`: `t/T` or `t^2/T^2`.
    pub fn value(self, t: usize, steps: usize) -> Result<f64, Error> {
        if t > steps {
            return Err(Error::TimeOutOfRange { t, steps });
        }
        if steps == 0 {
            return Ok(1.0);
        }
        let s = t as f64 / steps as f64;
        Ok(match self {
            Schedule::Linear => s,
            Schedule::Quadratic => s * s,
        })
    }
}

pub trait LogDensity: Sync + Send {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
    /// Adds `scale * grad log density(x)` into `grad` and returns the log-density.
    fn accumulate_grad(&self, x: &[f64], scale: f64, grad: &mut [f64]) -> f64;
}

/// A normalized density that can be sampled.
pub trait BaseMeasure: LogDensity {
    fn sample(&self, rng: &mut StreamRng, out: &mut [f64]);
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        Gaussian::dim(self)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_pdf(x)
    }

    fn accumulate_grad(&self, x: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let p = self.precision();
        let d = x.len();
        let mut q = 0.0;
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += p[(i, j)] * (x[j] - self.mean[j]);
            }
            q += s * (x[i] - self.mean[i]);
            grad[i] -= scale * s;
        }
        self.log_norm() - 0.5 * q
    }
}

impl BaseMeasure for Gaussian {
    fn sample(&self, rng: &mut StreamRng, out: &mut [f64]) {
        Gaussian::sample(self, rng, out)
    }
}

/// `l(x) = log N(y; x, R)`.
#[derive(Debug, Clone)]
pub struct GaussianLikelihood {
    noise: Gaussian,
}

impl GaussianLikelihood {
    pub fn new(y: Vector, r: Matrix) -> Result<Self, Error> {
        Ok(Self { noise: Gaussian::new(y, r)? })
    }
}

impl LogDensity for GaussianLikelihood {
    fn dim(&self) -> usize {
        self.noise.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.noise.log_pdf(x)
    }

    fn accumulate_grad(&self, x: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        self.noise.accumulate_grad(x, scale, grad)
    }
}

/// Independent Student-t coordinates.
#[derive(Debug, Clone)]
pub struct StudentTPrior {
    pub dim: usize,
    pub df: f64,
    pub scale: f64,
    pub center: f64,
    log_norm: f64,
}

impl StudentTPrior {
    pub fn new(dim: usize, df: f64, scale: f64, center: f64) -> Self {
        let log_norm = libm::lgamma(0.5 * (df + 1.0))
            - libm::lgamma(0.5 * df)
            - 0.5 * (df * core::f64::consts::PI).ln()
            - scale.ln();
        Self { dim, df, scale, center, log_norm }
    }

    /// df 4, scale 2.5, center 0.
    pub fn weakly_informative(dim: usize) -> Self {
        Self::new(dim, 4.0, 2.5, 0.0)
    }
}

impl LogDensity for StudentTPrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for &xi in x {
            let z = (xi - self.center) / self.scale;
            s += self.log_norm - 0.5 * (self.df + 1.0) * (z * z / self.df).ln_1p();
        }
        s
    }

    fn accumulate_grad(&self, x: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let mut s = 0.0;
        for (g, &xi) in grad.iter_mut().zip(x) {
            let z = (xi - self.center) / self.scale;
            s += self.log_norm - 0.5 * (self.df + 1.0) * (z * z / self.df).ln_1p();
            *g -= scale * (self.df + 1.0) * z / (self.scale * (self.df + z * z));
        }
        s
    }
}

impl BaseMeasure for StudentTPrior {
    fn sample(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let dist = rand_distr::StudentT::new(self.df).expect("df > 0");
        for o in out.iter_mut() {
            *o = self.center + self.scale * rng.sample(dist);
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood with logistic link over a row-major design.
#[derive(Debug, Clone)]
pub struct LogisticLikelihood {
    design: Vec<f64>,
    response: Vec<f64>,
    dim: usize,
}

impl LogisticLikelihood {
    pub fn new(design: Vec<f64>, response: Vec<f64>, dim: usize) -> Result<Self, Error> {
        if dim == 0 || design.len() != response.len() * dim {
            return Err(Error::DimensionMismatch { expected: response.len() * dim, got: design.len() });
        }
        Ok(Self { design, response, dim })
    }

    pub fn rows(&self) -> usize {
        self.response.len()
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }
}

impl LogDensity for LogisticLikelihood {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (row, &y) in self.design.chunks(self.dim).zip(&self.response) {
            let eta: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            s += y * eta - softplus(eta);
        }
        s
    }

    fn accumulate_grad(&self, x: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let mut s = 0.0;
        for (row, &y) in self.design.chunks(self.dim).zip(&self.response) {
            let eta: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            s += y * eta - softplus(eta);
            let r = scale * (y - sigmoid(eta));
            for (g, a) in grad.iter_mut().zip(row) {
                *g += r * a;
            }
        }
        s
    }
}

pub fn logistic_loglik(model: &LogisticLikelihood, x: &[f64]) -> f64 {
    model.log_density(x)
}

pub fn logistic_loglik_grad(model: &LogisticLikelihood, x: &[f64]) -> Vec<f64> {
    let mut g = alloc::vec![0.0; x.len()];
    model.accumulate_grad(x, 1.0, &mut g);
    g
}

pub fn t_prior_logpdf(prior: &StudentTPrior, x: &[f64]) -> f64 {
    prior.log_density(x)
}

pub fn t_prior_grad(prior: &StudentTPrior, x: &[f64]) -> Vec<f64> {
    let mut g = alloc::vec![0.0; x.len()];
    prior.accumulate_grad(x, 1.0, &mut g);
    g
}

/// A sequence of unnormalized densities `gamma_0, ..., gamma_T`.
pub trait Path: Sync + Send {
    fn dim(&self) -> usize;
    fn steps(&self) -> usize;
    fn lambda(&self, t: usize) -> f64;
    fn log_gamma(&self, t: usize, x: &[f64]) -> f64;
    /// Writes `grad log gamma_t(x)` into `grad` and returns `log gamma_t(x)`.
    fn log_gamma_grad(&self, t: usize, x: &[f64], grad: &mut [f64]) -> f64;
    fn sample_initial(&self, rng: &mut StreamRng, out: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct AnnealingPath<B, L> {
    pub base: B,
    pub loglik: L,
    pub schedule: Schedule,
    pub steps: usize,
    lambdas: Vec<f64>,
}

impl<B: BaseMeasure, L: LogDensity> AnnealingPath<B, L> {
    pub fn new(base: B, loglik: L, schedule: Schedule, steps: usize) -> Result<Self, Error> {
        if base.dim() != loglik.dim() {
            return Err(Error::DimensionMismatch { expected: base.dim(), got: loglik.dim() });
        }
        let lambdas = (0..=steps).map(|t| schedule.value(t, steps)).collect::<Result<_, _>>()?;
        Ok(Self { base, loglik, schedule, steps, lambdas })
    }
}

impl<B: BaseMeasure, L: LogDensity> Path for AnnealingPath<B, L> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn lambda(&self, t: usize) -> f64 {
        self.lambdas[t]
    }

    fn log_gamma(&self, t: usize, x: &[f64]) -> f64 {
        let lam = self.lambdas[t];
        let base = self.base.log_density(x);
        if lam == 0.0 {
            base
        } else {
            base + lam * self.loglik.log_density(x)
        }
    }

    fn log_gamma_grad(&self, t: usize, x: &[f64], grad: &mut [f64]) -> f64 {
        let lam = self.lambdas[t];
        grad.iter_mut().for_each(|g| *g = 0.0);
        let base = self.base.accumulate_grad(x, 1.0, grad);
        if lam == 0.0 {
            base
        } else {
            base + lam * self.loglik.accumulate_grad(x, lam, grad)
        }
    }

    fn sample_initial(&self, rng: &mut StreamRng, out: &mut [f64]) {
        self.base.sample(rng, out)
    }
}

/// Linear-Gaussian model: prior `N(mu0, Sigma0)`, observation `y ~ N(x, R)`.
#[derive(Debug, Clone)]
pub struct LqgModel {
    pub mu0: Vector,
    pub sigma0: Matrix,
    pub y: Vector,
    pub r: Matrix,
}

pub type LqgPath = AnnealingPath<Gaussian, GaussianLikelihood>;

impl LqgModel {
    /// `mu0 = 0`, `Sigma0 = I`, `y = xi 1`, `R` with unit diagonal and `rho` elsewhere.
    pub fn equicorrelated(d: usize, xi: f64, rho: f64) -> Self {
        let r = Matrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho });
        Self { mu0: Vector::zeros(d), sigma0: Matrix::identity(d, d), y: Vector::from_element(d, xi), r }
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// Moments of `pi_lambda`: `Sigma = (Sigma0^-1 + lambda R^-1)^-1`,
    /// `mu = Sigma (Sigma0^-1 mu0 + lambda R^-1 y)`.
    pub fn intermediate(&self, lambda: f64) -> Result<(Vector, Matrix), Error> {
        let p0 = linalg::spd_inverse(&self.sigma0)?;
        let ri = linalg::spd_inverse(&self.r)?;
        let sigma = linalg::spd_inverse(&(&p0 + &ri * lambda))?;
        let mu = &sigma * (&p0 * &self.mu0 + &ri * &self.y * lambda);
        Ok((mu, sigma))
    }

    /// `log Z_lambda = log int N(x; mu0, Sigma0) N(y; x, R)^lambda dx`.
    pub fn log_normconst(&self, lambda: f64) -> Result<f64, Error> {
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let d = self.dim() as f64;
        let ln2pi = (2.0 * core::f64::consts::PI).ln();
        let logdet_r = linalg::spd_log_det(&self.r)?;
        let pred = &self.sigma0 + &self.r / lambda;
        let marginal = linalg::gaussian_logpdf(self.y.as_slice(), &self.mu0, &pred)?;
        Ok(-0.5 * d * lambda * ln2pi - 0.5 * lambda * logdet_r + 0.5 * d * ln2pi + 0.5 * logdet_r
            - 0.5 * d * lambda.ln()
            + marginal)
    }

    pub fn path(&self, schedule: Schedule, steps: usize) -> Result<LqgPath, Error> {
        let base = Gaussian::new(self.mu0.clone(), self.sigma0.clone())?;
        let lik = GaussianLikelihood::new(self.y.clone(), self.r.clone())?;
        AnnealingPath::new(base, lik, schedule, steps)
    }

    /// Euler-Maruyama Langevin kernels: `K = I - h Sigma_t^-1 / 2`,
    /// `r = h Sigma_t^-1 mu_t / 2`, `H = h I`, for `t = 1..=T`.
    pub fn langevin_kernels(&self, schedule: Schedule, steps: usize, h: f64) -> Result<Vec<GaussianKernel>, Error> {
        let d = self.dim();
        (1..=steps)
            .map(|t| {
                let (mu, sigma) = self.intermediate(schedule.value(t, steps)?)?;
                let prec = linalg::spd_inverse(&sigma)?;
                Ok(GaussianKernel {
                    k: Matrix::identity(d, d) - &prec * (0.5 * h),
                    r: &prec * &mu * (0.5 * h),
                    h: Matrix::identity(d, d) * h,
                })
            })
            .collect()
    }

    /// Discretized Brownian motion: `K = I`, `r = 0`, `H = h I`.
    pub fn brownian_kernels(&self, steps: usize, h: f64) -> Vec<GaussianKernel> {
        let d = self.dim();
        (0..steps)
            .map(|_| GaussianKernel {
                k: Matrix::identity(d, d),
                r: Vector::zeros(d),
                h: Matrix::identity(d, d) * h,
            })
            .collect()
    }
}

pub fn lqg_intermediate(model: &LqgModel, lambda: f64) -> Result<(Vector, Matrix), Error> {
    model.intermediate(lambda)
}

pub fn lqg_log_normconst(model: &LqgModel, lambda: f64) -> Result<f64, Error> {
    model.log_normconst(lambda)
}

/// Bayesian logistic regression with independent Student-t priors.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub prior: StudentTPrior,
    pub likelihood: LogisticLikelihood,
}

pub type LogisticPath = AnnealingPath<StudentTPrior, LogisticLikelihood>;

impl LogisticModel {
    pub fn new(design: Vec<f64>, response: Vec<f64>, dim: usize) -> Result<Self, Error> {
        Ok(Self {
            prior: StudentTPrior::weakly_informative(dim),
            likelihood: LogisticLikelihood::new(design, response, dim)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.likelihood.dim
    }

    pub fn path(&self, schedule: Schedule, steps: usize) -> Result<LogisticPath, Error> {
        AnnealingPath::new(self.prior.clone(), self.likelihood.clone(), schedule, steps)
    }
}

/// Predictor scaling for weakly informative priors: binary columns are
/// centred and scaled to differ by 1 between their two levels; other
/// columns are centred and scaled to standard deviation 0.5.
pub fn standardize_predictors(design: &mut [f64], dim: usize) {
    let rows = design.len() / dim;
    for j in 0..dim {
        let col: Vec<f64> = (0..rows).map(|i| design[i * dim + j]).collect();
        let mean = col.iter().sum::<f64>() / rows as f64;
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let binary = col.iter().all(|&v| v == lo || v == hi);
        let scale = if binary {
            hi - lo
        } else {
            let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (rows as f64 - 1.0)).sqrt();
            2.0 * sd
        };
        let scale = if scale > 0.0 { scale } else { 1.0 };
        for i in 0..rows {
            design[i * dim + j] = (design[i * dim + j] - mean) / scale;
        }
    }
}
