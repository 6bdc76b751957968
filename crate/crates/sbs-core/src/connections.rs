//! Transport-cost estimators: the endpoint-coupling bound on `W2` and the
//! kinetic energy of a gradient flow, with the exact minimum-energy flow of
//! the linear-Gaussian model.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Error;
use crate::exec;
use crate::linalg::{self, Matrix, Vector};
use crate::policy::PolicySequence;
use crate::rng;
use crate::ssb::normalized;
use crate::targets::LqgModel;

/// Endpoint pairs `(X_0^n, X_T^n)` of a bridge.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSample {
    pub d: usize,
    pub x0: Vec<f64>,
    pub xt: Vec<f64>,
}

impl CoupledSample {
    pub fn new(d: usize, x0: Vec<f64>, xt: Vec<f64>) -> Result<Self, Error> {
        if x0.len() != xt.len() || x0.is_empty() || x0.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: x0.len(), got: xt.len() });
        }
        Ok(Self { d, x0, xt })
    }

    pub fn len(&self) -> usize {
        self.x0.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Estimate {
    /// Root mean squared displacement.
    pub value: f64,
    pub squared: f64,
}

/// `(N^-1 sum_n |X_0^n - X_T^n|^2)^(1/2)`.
pub fn w2_upper_estimate(c: &CoupledSample) -> W2Estimate {
    let squared = c.x0.iter().zip(&c.xt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / c.len() as f64;
    W2Estimate { value: squared.sqrt(), squared }
}

/// `h sum_{t=1}^T sum_n W_t^n |v_t(X_t^n)|^2` for a velocity field `v_t`
/// (`grad(t, x, out)`), with uniform weights when `log_weights` is `None`.
pub fn flow_cost<G>(grad: G, slices: &[Vec<f64>], log_weights: Option<&[Vec<f64>]>, d: usize, h: f64) -> Result<f64, Error>
where
    G: Fn(usize, &[f64], &mut [f64]) + Sync,
{
    let mut total = 0.0;
    for (t, xs) in slices.iter().enumerate().skip(1) {
        let n = xs.len() / d;
        let sq = exec::map(n, |i| {
            let mut g = alloc::vec![0.0; d];
            grad(t, &xs[i * d..(i + 1) * d], &mut g);
            g.iter().map(|v| v * v).sum::<f64>()
        });
        let m = match log_weights {
            Some(lw) => normalized(&lw[t])?.iter().zip(&sq).map(|(w, s)| w * s).sum(),
            None => sq.iter().sum::<f64>() / n as f64,
        };
        total += m;
    }
    Ok(h * total)
}

/// Kinetic-energy cost of the gradient field `grad log psi_t` of a policy
/// sequence along particle slices `t = 0..=T`.
pub fn flow_cost_estimate(policies: &PolicySequence, slices: &[Vec<f64>], log_weights: Option<&[Vec<f64>]>, h: f64) -> Result<f64, Error> {
    flow_cost(|t, x, g| policies.get(t).grad_log_psi(x, g), slices, log_weights, policies.dim(), h)
}

/// Affine velocity field `u(x) = M x + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub m: Matrix,
    pub v: Vector,
}

impl FlowField {
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        linalg::mat_vec(&self.m, x, out);
        for (o, v) in out.iter_mut().zip(self.v.iter()) {
            *o += v;
        }
    }
}

/// Minimum kinetic-energy flow carrying `pi_0` along `pi_{s/tau}`:
/// `u_s(x) = -(2 tau)^-1 Sigma_s R^-1 (x + mu_s - 2 y)`. Requires the prior
/// `N(0, I)`.
pub fn lqg_flow_policy(model: &LqgModel, tau: f64, s: f64) -> Result<FlowField, Error> {
    if !(0.0..=tau).contains(&s) || !(tau > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("flow time {s} outside [0, {tau}]")));
    }
    let d = model.dim();
    if model.mu0.norm() != 0.0 || model.sigma0 != Matrix::identity(d, d) {
        return Err(Error::InvalidConfig("the closed-form flow needs a standard normal prior".into()));
    }
    let (mu, sigma) = model.intermediate(s / tau)?;
    let ri = linalg::spd_inverse(&model.r)?;
    let m = &sigma * &ri * (-0.5 / tau);
    let v = &m * (mu - &model.y * 2.0);
    Ok(FlowField { m, v })
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    /// Kinetic-energy estimate, velocity evaluated at the particles after each step.
    pub cost: f64,
    /// Particles at `t = T`.
    pub terminal: Vec<f64>,
    pub terminal_moments: (Vector, Matrix),
}

/// Forward-Euler integration of `dx/ds = u_s(x)` on `s_t = t h`, `h = tau / T`,
/// for `n` particles drawn from `pi_0`.
pub fn simulate_lqg_flow(model: &LqgModel, tau: f64, steps: usize, n: usize, seed: u64) -> Result<FlowRun, Error> {
    let d = model.dim();
    let h = tau / steps as f64;
    let fields = (0..=steps).map(|t| lqg_flow_policy(model, tau, (t as f64 * h).min(tau))).collect::<Result<Vec<_>, _>>()?;
    let mut x = alloc::vec![0.0; n * d];
    exec::rows_mut(&mut x, d, |i, row| {
        let mut r = rng::stream(seed, &[rng::INIT, i as u64]);
        rng::standard_normals(&mut r, row);
    });
    let mut cost = 0.0;
    for t in 1..=steps {
        let prev = &fields[t - 1];
        exec::rows_mut(&mut x, d, |_, row| {
            let mut u = alloc::vec![0.0; d];
            prev.eval(row, &mut u);
            for (xi, ui) in row.iter_mut().zip(&u) {
                *xi += h * ui;
            }
        });
        let cur = &fields[t];
        let sq = exec::map(n, |i| {
            let mut u = alloc::vec![0.0; d];
            cur.eval(&x[i * d..(i + 1) * d], &mut u);
            u.iter().map(|v| v * v).sum::<f64>()
        });
        cost += h * sq.iter().sum::<f64>() / n as f64;
    }
    let terminal_moments = linalg::moments(&x, d);
    Ok(FlowRun { cost, terminal: x, terminal_moments })
}
