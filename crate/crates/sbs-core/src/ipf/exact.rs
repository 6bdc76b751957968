//! Exact IPF for linear-Gaussian problems.
//!
//! With Gaussian boundary marginals and affine-Gaussian kernels every IPF
//! iterate stays Gaussian. Each iteration computes the terminal refinement
//! `phi_T = d pi_T / d q_T`, pulls it back through the current kernels with
//! exact twisting, updates the kernels and the initial marginal of the
//! P-half-bridge, and accumulates the two boundary potentials.

use alloc::vec::Vec;

use crate::error::Error;
use crate::kernels::GaussianKernel;
use crate::linalg::{self, Matrix, Vector};
use crate::policy::{PolicyMode, QuadraticPolicy};

/// Mean and covariance of a Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vector,
    pub cov: Matrix,
}

impl Moments {
    pub fn new(mean: Vector, cov: Matrix) -> Self {
        Self { mean, cov }
    }

    pub fn w2(&self, other: &Moments) -> Result<f64, Error> {
        linalg::w2_gaussian(&self.mean, &self.cov, &other.mean, &other.cov)
    }

    pub fn kl(&self, other: &Moments) -> Result<f64, Error> {
        linalg::kl_gaussian(&self.mean, &self.cov, &other.mean, &other.cov)
    }
}

/// Marginals at `t = 0..=T` of a chain started at `init`.
pub fn forward_marginals(init: &Moments, kernels: &[GaussianKernel]) -> Vec<Moments> {
    let mut out = Vec::with_capacity(kernels.len() + 1);
    out.push(init.clone());
    for k in kernels {
        let last = out.last().unwrap();
        let (m, c) = k.push_forward(&last.mean, &last.cov);
        out.push(Moments::new(m, c));
    }
    out
}

/// `-log(d target / d current)` as a quadratic (up to nothing: exact).
pub fn log_ratio_policy(target: &Moments, current: &Moments) -> Result<QuadraticPolicy, Error> {
    let pt = linalg::spd_inverse(&target.cov)?;
    let pc = linalg::spd_inverse(&current.cov)?;
    let a = linalg::symmetrize(&((&pt - &pc) * 0.5));
    let b = &pc * &current.mean - &pt * &target.mean;
    let c = 0.5
        * (target.mean.dot(&(&pt * &target.mean)) - current.mean.dot(&(&pc * &current.mean))
            + linalg::spd_log_det(&target.cov)?
            - linalg::spd_log_det(&current.cov)?);
    QuadraticPolicy::full(&a, b.as_slice(), c)
}

/// State after `i` IPF iterations.
#[derive(Debug, Clone)]
pub struct LqgIpfState {
    pub iteration: usize,
    /// Kernels of `Q^(i)`, index `t - 1` for `t = 1..=T`.
    pub kernels: Vec<GaussianKernel>,
    /// Cumulative policy `psi^(i)_t`, `t = 0..=T`, with `psi_0 = 1`.
    pub policies: Vec<QuadraticPolicy>,
    /// Refinement `phi^(i)_t`, `t = 0..=T` (identity at `i = 0`).
    pub refinement: Vec<QuadraticPolicy>,
    /// Initial marginal of the P-half-bridge `P^(i)` (`pi_0` at `i = 0`).
    pub p0: Moments,
    /// Accumulated initial potential `alpha^(i)`.
    pub alpha: QuadraticPolicy,
    /// Accumulated terminal potential `beta^(i)`.
    pub beta: QuadraticPolicy,
}

/// Boundary marginals of an LQG bridge problem.
#[derive(Debug, Clone)]
pub struct LqgBridge {
    pub initial: Moments,
    pub terminal: Moments,
    /// Reference kernels, index `t - 1`.
    pub kernels: Vec<GaussianKernel>,
}

impl LqgBridge {
    pub fn steps(&self) -> usize {
        self.kernels.len()
    }

    pub fn dim(&self) -> usize {
        self.initial.mean.len()
    }

    pub fn initial_state(&self) -> LqgIpfState {
        let d = self.dim();
        let id = QuadraticPolicy::identity(d, PolicyMode::Full);
        LqgIpfState {
            iteration: 0,
            kernels: self.kernels.clone(),
            policies: alloc::vec![id.clone(); self.steps() + 1],
            refinement: alloc::vec![id.clone(); self.steps() + 1],
            p0: self.initial.clone(),
            alpha: id.clone(),
            beta: id,
        }
    }

    /// One IPF iteration: the P-half-bridge followed by the Q-half-bridge.
    pub fn step(&self, prev: &LqgIpfState) -> Result<LqgIpfState, Error> {
        let t_max = self.steps();
        let q = forward_marginals(&self.initial, &prev.kernels);
        let mut phi = alloc::vec![QuadraticPolicy::identity(self.dim(), PolicyMode::Full); t_max + 1];
        phi[t_max] = log_ratio_policy(&self.terminal, &q[t_max])?;
        let mut kernels = prev.kernels.clone();
        for t in (1..=t_max).rev() {
            let (twisted, norm) = prev.kernels[t - 1].exact_twist(&phi[t])?;
            kernels[t - 1] = twisted;
            phi[t - 1] = norm;
        }
        // p0 = pi_0 twisted by phi_0
        let p_init = linalg::spd_inverse(&self.initial.cov)?;
        let prec = linalg::symmetrize(&(&p_init + phi[0].a_matrix() * 2.0));
        let gamma_cov = linalg::spd_inverse(&prec)?;
        let gamma_mean = &gamma_cov * (&p_init * &self.initial.mean - Vector::from_row_slice(phi[0].b()));
        let p0 = Moments::new(gamma_mean, linalg::symmetrize(&gamma_cov));
        let alpha_inc = log_ratio_policy(&self.initial, &p0)?;
        let policies = (0..=t_max)
            .map(|t| if t == 0 { prev.policies[0].clone() } else { prev.policies[t].multiply(&phi[t]) })
            .collect();
        Ok(LqgIpfState {
            iteration: prev.iteration + 1,
            kernels,
            policies,
            alpha: prev.alpha.multiply(&alpha_inc),
            beta: prev.beta.multiply(&phi[t_max]),
            refinement: phi,
            p0,
        })
    }

    /// States for `i = 0..=iterations`.
    pub fn run(&self, iterations: usize) -> Result<Vec<LqgIpfState>, Error> {
        let mut states = Vec::with_capacity(iterations + 1);
        states.push(self.initial_state());
        for _ in 0..iterations {
            let next = self.step(states.last().unwrap())?;
            states.push(next);
        }
        Ok(states)
    }

    /// Marginals of `Q^(i) = pi_0 prod M^(i)`.
    pub fn q_marginals(&self, state: &LqgIpfState) -> Vec<Moments> {
        forward_marginals(&self.initial, &state.kernels)
    }

    /// Marginals of `P^(i) = p0^(i) prod M^(i)`.
    pub fn p_marginals(&self, state: &LqgIpfState) -> Vec<Moments> {
        forward_marginals(&state.p0, &state.kernels)
    }

    /// Composite reference transition `x_T | x_0 ~ N(K x_0 + r, H)`.
    pub fn composite_kernel(&self) -> GaussianKernel {
        let d = self.dim();
        let mut acc = GaussianKernel { k: Matrix::identity(d, d), r: Vector::zeros(d), h: Matrix::zeros(d, d) };
        for k in &self.kernels {
            acc = GaussianKernel {
                k: &k.k * &acc.k,
                r: &k.k * &acc.r + &k.r,
                h: linalg::symmetrize(&(&k.k * &acc.h * k.k.transpose() + &k.h)),
            };
        }
        acc
    }

    /// Boundary marginals of `alpha(x_0) Q(dx_{0:T}) beta(x_T)`, normalized,
    /// from the joint Gaussian of `(x_0, x_T)` under the reference.
    pub fn recomposed_marginals(&self, alpha: &QuadraticPolicy, beta: &QuadraticPolicy) -> Result<(Moments, Moments), Error> {
        let d = self.dim();
        let comp = self.composite_kernel();
        let hi = linalg::spd_inverse(&comp.h)?;
        let p0 = linalg::spd_inverse(&self.initial.cov)?;
        let kt_hi = comp.k.transpose() * &hi;
        let mut prec = Matrix::zeros(2 * d, 2 * d);
        prec.view_mut((0, 0), (d, d)).copy_from(&(&p0 + &kt_hi * &comp.k + alpha.a_matrix() * 2.0));
        prec.view_mut((0, d), (d, d)).copy_from(&(-&kt_hi));
        prec.view_mut((d, 0), (d, d)).copy_from(&(-(&hi * &comp.k)));
        prec.view_mut((d, d), (d, d)).copy_from(&(&hi + beta.a_matrix() * 2.0));
        let mut lin = Vector::zeros(2 * d);
        lin.rows_mut(0, d).copy_from(&(&p0 * &self.initial.mean - &kt_hi * &comp.r - Vector::from_row_slice(alpha.b())));
        lin.rows_mut(d, d).copy_from(&(&hi * &comp.r - Vector::from_row_slice(beta.b())));
        let cov = linalg::spd_inverse(&linalg::symmetrize(&prec))?;
        let mean = &cov * lin;
        let first = Moments::new(mean.rows(0, d).into_owned(), linalg::symmetrize(&cov.view((0, 0), (d, d)).into_owned()));
        let last = Moments::new(mean.rows(d, d).into_owned(), linalg::symmetrize(&cov.view((d, d), (d, d)).into_owned()));
        Ok((first, last))
    }
}

pub fn exact_lqg_ipf(bridge: &LqgBridge, iterations: usize) -> Result<Vec<LqgIpfState>, Error> {
    bridge.run(iterations)
}

/// Expected KL between two kernels, `E_{x ~ N(m, C)} KL(M1(x, .) | M2(x, .))`.
pub fn expected_kernel_kl(m1: &GaussianKernel, m2: &GaussianKernel, at: &Moments) -> Result<f64, Error> {
    let d = at.mean.len() as f64;
    let p2 = linalg::spd_inverse(&m2.h)?;
    let dk = &m1.k - &m2.k;
    let dr = &dk * &at.mean + &m1.r - &m2.r;
    let maha = dr.dot(&(&p2 * &dr)) + (dk.transpose() * &p2 * &dk * &at.cov).trace();
    Ok(0.5 * ((&p2 * &m1.h).trace() + maha - d + linalg::spd_log_det(&m2.h)? - linalg::spd_log_det(&m1.h)?))
}

/// `KL(Q1 | Q2)` for two chains with the same initial law `init`.
pub fn path_kl(init: &Moments, k1: &[GaussianKernel], k2: &[GaussianKernel]) -> Result<f64, Error> {
    let marg = forward_marginals(init, k1);
    let mut kl = 0.0;
    for (t, (a, b)) in k1.iter().zip(k2).enumerate() {
        kl += expected_kernel_kl(a, b, &marg[t])?;
    }
    Ok(kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{LqgModel, Schedule};
    use approx::assert_relative_eq;

    fn langevin_bridge() -> LqgBridge {
        let model = LqgModel::equicorrelated(2, 8.0, 0.8);
        let (mt, st) = model.intermediate(1.0).unwrap();
        LqgBridge {
            initial: Moments::new(model.mu0.clone(), model.sigma0.clone()),
            terminal: Moments::new(mt, st),
            kernels: model.langevin_kernels(Schedule::Linear, 40, 0.05).unwrap(),
        }
    }

    /// Backward recursion for `A, b, c` written out as matrix formulas, used
    /// as an independent check on pulling policies back by exact twisting.
    fn textbook_pullback(k: &GaussianKernel, a: &Matrix, b: &Vector, c: f64) -> (Matrix, Vector, f64) {
        let hi = linalg::spd_inverse(&k.h).unwrap();
        let inner = linalg::spd_inverse(&(a + &hi * 0.5)).unwrap();
        let a_prev = k.k.transpose() * (&hi - &hi * &inner * &hi * 0.5) * &k.k * 0.5;
        let u = &hi * &k.r - b;
        let b_prev = k.k.transpose() * &hi * (&k.r - &inner * &u * 0.5);
        let c_prev = c + 0.5 * k.r.dot(&(&hi * &k.r)) - 0.25 * u.dot(&(&inner * &u));
        (a_prev, b_prev, c_prev)
    }

    #[test]
    fn pullback_agrees_with_textbook_recursion_up_to_constant() {
        let bridge = langevin_bridge();
        let states = bridge.run(1).unwrap();
        let phi = &states[1].refinement;
        for t in [1usize, 20, 40] {
            let (a, b, _) = textbook_pullback(
                &bridge.kernels[t - 1],
                &phi[t].a_matrix(),
                &Vector::from_row_slice(phi[t].b()),
                phi[t].c(),
            );
            assert!((a - phi[t - 1].a_matrix()).abs().max() < 1e-9);
            assert!((b - Vector::from_row_slice(phi[t - 1].b())).abs().max() < 1e-9);
        }
    }

    #[test]
    fn pullback_constant_matches_expectation() {
        // log M(phi)(x) = log E[phi(X')] checked on a grid for d = 1
        let k = GaussianKernel {
            k: Matrix::from_element(1, 1, 0.9),
            r: Vector::from_element(1, 0.1),
            h: Matrix::from_element(1, 1, 0.05),
        };
        let phi = QuadraticPolicy::full(&Matrix::from_element(1, 1, 0.4), &[-0.7], 0.2).unwrap();
        let (_, norm) = k.exact_twist(&phi).unwrap();
        let x = 0.3;
        let mean = 0.9 * x + 0.1;
        let sd = 0.05f64.sqrt();
        let n = 20000;
        let dx = 20.0 * sd / n as f64;
        let terms: Vec<f64> = (0..=n)
            .map(|i| {
                let y = mean - 10.0 * sd + i as f64 * dx;
                -0.5 * ((y - mean) / sd).powi(2) - (sd * (2.0 * core::f64::consts::PI).sqrt()).ln() + phi.log_psi(&[y]) + dx.ln()
            })
            .collect();
        assert_relative_eq!(norm.log_psi(&[x]), linalg::log_sum_exp(&terms), epsilon = 1e-8);
    }

    #[test]
    fn half_bridges_enforce_their_marginal() {
        let bridge = langevin_bridge();
        let states = bridge.run(6).unwrap();
        for s in &states[1..] {
            let p = bridge.p_marginals(s);
            assert!(p.last().unwrap().w2(&bridge.terminal).unwrap() < 1e-10);
            let q = bridge.q_marginals(s);
            assert!(q[0].w2(&bridge.initial).unwrap() == 0.0);
            let prev_alpha = &states[s.iteration - 1].alpha;
            let (_, p_end) = bridge.recomposed_marginals(prev_alpha, &s.beta).unwrap();
            assert!(p_end.w2(&bridge.terminal).unwrap() < 1e-10);
            let (q_start, _) = bridge.recomposed_marginals(&s.alpha, &s.beta).unwrap();
            assert!(q_start.w2(&bridge.initial).unwrap() < 1e-10);
        }
    }

    #[test]
    fn recomposition_matches_twisted_chain() {
        // P^(i) = alpha^(i-1) Q beta^(i) has initial marginal p0^(i)
        let bridge = langevin_bridge();
        let states = bridge.run(3).unwrap();
        for i in 1..=3 {
            let (start, _) = bridge.recomposed_marginals(&states[i - 1].alpha, &states[i].beta).unwrap();
            assert!(start.w2(&states[i].p0).unwrap() < 1e-9);
        }
    }

    #[test]
    fn converges_to_fixed_point() {
        let bridge = langevin_bridge();
        let states = bridge.run(200).unwrap();
        let last = &states[200];
        let prev = &states[199];
        let inc = |a: &QuadraticPolicy, b: &QuadraticPolicy| {
            a.params().iter().zip(b.params()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        assert!(inc(&last.alpha, &prev.alpha) < 1e-10);
        assert!(inc(&last.beta, &prev.beta) < 1e-10);
        let (s0, st) = bridge.recomposed_marginals(&last.alpha, &last.beta).unwrap();
        assert!(s0.w2(&bridge.initial).unwrap() < 1e-9);
        assert!(st.w2(&bridge.terminal).unwrap() < 1e-9);
    }

    #[test]
    fn distance_to_bridge_decreases_every_iteration() {
        let bridge = langevin_bridge();
        let states = bridge.run(200).unwrap();
        let s = bridge.q_marginals(&states[200]);
        let dists: Vec<Vec<f64>> = (0..=5).map(|i| {
            let q = bridge.q_marginals(&states[i]);
            (1..=40).map(|t| q[t].w2(&s[t]).unwrap().ln()).collect()
        }).collect();
        for t in 0..40 {
            for i in 1..=5 {
                assert!(dists[i][t] < dists[i - 1][t], "t={} i={i}: {} !< {}", t + 1, dists[i][t], dists[i - 1][t]);
            }
        }
    }

    #[test]
    fn kernel_kl_zero_for_identical_kernels() {
        let bridge = langevin_bridge();
        assert_eq!(path_kl(&bridge.initial, &bridge.kernels, &bridge.kernels).unwrap(), 0.0);
    }
}
