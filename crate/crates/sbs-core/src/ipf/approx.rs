//! Particle approximation of IPF on one segment `[start:end]`.
//!
//! Each iteration samples `N` trajectories from the current twisted process,
//! estimates the terminal log-ratio for each, fits the refinement by
//! backward regression and multiplies it into the policy.

use alloc::vec::Vec;

use super::adp::{adp_sweep, AdpOptions};
use super::csmc::rn_estimate_csmc;
use super::early_stop::{early_stop_check, StopDecision};
use super::segment::{propagate_segment, twisted_steps, with_index, Segment};
use super::{IpfConfig, StopRule};
use crate::error::Error;
use crate::exec;
use crate::kernels::{diag_preconditioner, mala_step, EmKernel};
use crate::policy::QuadraticPolicy;
use crate::rng;
use crate::ssb::weights::ess;
use crate::targets::Path;

/// Replaces the terminal estimates: given the current segment policies and
/// the terminal states (flat `N x d`), returns one log target per particle.
pub type TerminalOverride<'a> = &'a (dyn Fn(&[QuadraticPolicy], &[f64]) -> Result<Vec<f64>, Error> + Sync);

#[derive(Debug, Clone)]
pub struct IpfOutput {
    /// Segment policies, index `j` for time `start + 1 + j`.
    pub policies: Vec<QuadraticPolicy>,
    /// Number of regression sweeps performed.
    pub iterations: usize,
    pub stopped_early: bool,
    /// ESS of the sampled trajectories at each iteration.
    pub ess: Vec<f64>,
    /// Particles excluded from terminal fits for non-finite estimates.
    pub dropped: usize,
    /// Policies after iterations `0..=iterations` when requested.
    pub iterates: Vec<Vec<QuadraticPolicy>>,
    /// Initial particles after any rejuvenation.
    pub particles: Vec<f64>,
}

/// `A` and `b` of every policy. The constant `c` is left out: it absorbs
/// `log Z_end / Z_start` at every iteration and never affects the kernels.
pub(crate) fn monitored_params(policies: &[QuadraticPolicy]) -> Vec<f64> {
    policies
        .iter()
        .flat_map(|p| {
            let mut v = p.params();
            v.pop();
            v
        })
        .collect()
}

/// Policies with `A` and `b` from `params` and `c` from `template`.
pub(crate) fn with_monitored(template: &[QuadraticPolicy], params: &[f64]) -> Result<Vec<QuadraticPolicy>, Error> {
    let mut out = Vec::with_capacity(template.len());
    let mut o = 0;
    for p in template {
        let k = crate::policy::param_count(p.mode(), p.dim()) - 1;
        let mut full = params[o..o + k].to_vec();
        full.push(p.c());
        out.push(QuadraticPolicy::from_params(p.mode(), p.dim(), &full)?);
        o += k;
    }
    Ok(out)
}

/// Moves every particle by one MALA step targeting `pi_t`.
pub fn rejuvenate<P: Path + ?Sized>(path: &P, t: usize, particles: &mut [f64], eps: f64, seed: u64, tags: &[u64]) {
    let d = path.dim();
    let precond = diag_preconditioner(particles, d);
    exec::rows_mut(particles, d, |n, row| {
        let mut r = rng::stream(seed, &with_index(tags, n));
        mala_step(path, t, row, &precond, eps, &mut r);
    });
}

/// Runs approximate IPF on `seg` from `init` (flat `N x d`, approximately
/// `pi_start`), starting from `start` policies (identity when `None`).
#[allow(clippy::too_many_arguments)]
pub fn approximate_ipf<P: Path + ?Sized>(
    path: &P,
    kernel: &EmKernel,
    seg: Segment,
    init: &[f64],
    start: Option<Vec<QuadraticPolicy>>,
    cfg: &IpfConfig,
    seed: u64,
    terminal: Option<TerminalOverride>,
) -> Result<IpfOutput, Error> {
    cfg.validate()?;
    let d = path.dim();
    let n = init.len() / d;
    let h = kernel.h;
    let mut policies = start.unwrap_or_else(|| alloc::vec![QuadraticPolicy::identity(d, cfg.policy_mode); seg.len()]);
    if policies.len() != seg.len() {
        return Err(Error::DimensionMismatch { expected: seg.len(), got: policies.len() });
    }
    for p in policies.iter_mut() {
        p.clamp_integrable(h);
    }
    let opts = AdpOptions { h, twist: cfg.twist, mode: cfg.policy_mode, ridge: cfg.ridge };
    let mut particles = init.to_vec();
    let mut history = alloc::vec![monitored_params(&policies)];
    let mut iterates = Vec::new();
    if cfg.keep_iterates {
        iterates.push(policies.clone());
    }
    let mut out_ess = Vec::new();
    let mut dropped = 0;
    let mut iterations = 0;
    let mut stopped_early = false;

    for i in 0..cfg.max_iters {
        let it = i as u64;
        if let Some(eps) = cfg.rejuvenation {
            rejuvenate(path, seg.start, &mut particles, eps, seed, &[rng::MALA, seg.start as u64, it]);
        }
        let steps = twisted_steps(h, &mut policies, cfg.twist)?;
        let sample = propagate_segment(path, kernel, seg, &steps, &particles, seed, &[rng::IPF_SAMPLE, seg.start as u64, it]);
        let e = ess(&sample.log_weights).unwrap_or(0.0);
        out_ess.push(e);
        if let StopRule::Ess { target, min_gain, patience } = cfg.stop {
            let gain_stalled = out_ess.len() > patience && e - out_ess[out_ess.len() - 1 - patience] < min_gain * n as f64;
            if e >= target * n as f64 || gain_stalled {
                stopped_early = true;
                break;
            }
        }

        let targets = match terminal {
            Some(f) => f(&policies, &sample.terminal())?,
            None if cfg.csmc_iters == 0 => sample.log_weights.clone(),
            None => {
                let res = exec::map(n, |k| {
                    let mut traj = sample.trajectory(k).to_vec();
                    let mut r = rng::stream(seed, &[rng::CSMC, seg.start as u64, it, k as u64]);
                    rn_estimate_csmc(path, kernel, seg, &steps, &mut traj, cfg.csmc_particles, cfg.csmc_iters, &mut r).map(|e| e.value)
                });
                res.into_iter().collect::<Result<Vec<_>, _>>()?
            }
        };
        let fit = adp_sweep(&sample, &targets, &policies, &opts)?;
        dropped += fit.dropped;
        policies = fit.updated;
        iterations = i + 1;
        history.push(monitored_params(&policies));
        if cfg.keep_iterates {
            iterates.push(policies.clone());
        }
        if let StopRule::EarlyStop(es) = cfg.stop {
            if let StopDecision::Stop(means) = early_stop_check(&history, es.window_cap, es.min_iters, es.alpha, es.bh) {
                policies = with_monitored(&policies, &means)?;
                for p in policies.iter_mut() {
                    p.clamp_integrable(h);
                }
                stopped_early = true;
                break;
            }
        }
    }
    Ok(IpfOutput { policies, iterations, stopped_early, ess: out_ess, dropped, iterates, particles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipf::exact::{forward_marginals, log_ratio_policy, LqgBridge, Moments};
    use crate::ipf::segment::SegmentSample;
    use crate::kernels::{GaussianKernel, TwistMode};
    use crate::policy::PolicyMode;
    use crate::stats;
    use crate::targets::{LqgModel, LqgPath, Schedule};

    struct Setup {
        model: LqgModel,
        path: LqgPath,
        kernels: Vec<GaussianKernel>,
        bridge: LqgBridge,
    }

    fn setup(steps: usize, h: f64) -> Setup {
        let model = LqgModel::equicorrelated(2, 8.0, 0.8);
        let path = model.path(Schedule::Linear, steps).unwrap();
        let kernels = model.langevin_kernels(Schedule::Linear, steps, h).unwrap();
        let (mt, st) = model.intermediate(1.0).unwrap();
        let bridge = LqgBridge { initial: Moments::new(model.mu0.clone(), model.sigma0.clone()), terminal: Moments::new(mt, st), kernels: kernels.clone() };
        Setup { model, path, kernels, bridge }
    }

    fn init_particles(s: &Setup, n: usize, seed: u64) -> Vec<f64> {
        let d = s.model.dim();
        let mut x = alloc::vec![0.0; n * d];
        for (i, row) in x.chunks_mut(d).enumerate() {
            let mut r = rng::stream(seed, &[rng::INIT, i as u64]);
            s.path.sample_initial(&mut r, row);
        }
        x
    }

    /// Marginals of the process twisted by `pols` (exact twisting of the affine kernels).
    fn q_marginals(s: &Setup, pols: &[QuadraticPolicy]) -> Vec<Moments> {
        let tw: Vec<GaussianKernel> = s.kernels.iter().zip(pols).map(|(k, p)| k.exact_twist(p).unwrap().0).collect();
        forward_marginals(&s.bridge.initial, &tw)
    }

    /// Terminal log-ratio `log d pi_T / d q_T^psi` from the exact marginals.
    fn exact_terminal(s: &Setup) -> impl Fn(&[QuadraticPolicy], &[f64]) -> Result<Vec<f64>, Error> + Sync + '_ {
        move |pols: &[QuadraticPolicy], xs: &[f64]| {
            let q = q_marginals(s, pols);
            let ratio = log_ratio_policy(&s.bridge.terminal, q.last().unwrap())?;
            Ok(xs.chunks(2).map(|x| ratio.log_psi(x)).collect())
        }
    }

    fn cfg(iters: usize) -> IpfConfig {
        IpfConfig { max_iters: iters, stop: StopRule::Fixed, keep_iterates: true, ..IpfConfig::default() }
    }

    #[test]
    fn zero_iterations_return_identity() {
        let s = setup(10, 0.1);
        let init = init_particles(&s, 50, 1);
        let out = approximate_ipf(&s.path, &EmKernel::langevin(0.1), Segment::new(0, 10).unwrap(), &init, None, &cfg(0), 3, None).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.policies.iter().all(|p| p.is_identity()));
    }

    #[test]
    fn zero_targets_give_identity_refinement() {
        let s = setup(5, 0.1);
        let init = init_particles(&s, 100, 2);
        let seg = Segment::new(0, 5).unwrap();
        let mut pols = alloc::vec![QuadraticPolicy::identity(2, PolicyMode::Full); 5];
        let steps = twisted_steps(0.1, &mut pols, TwistMode::Exact).unwrap();
        let sample: SegmentSample = propagate_segment(&s.path, &EmKernel::langevin(0.1), seg, &steps, &init, 1, &[rng::IPF_SAMPLE]);
        let opts = AdpOptions { h: 0.1, twist: TwistMode::Exact, mode: PolicyMode::Full, ridge: 1e-8 };
        let res = adp_sweep(&sample, &alloc::vec![0.0; 100], &pols, &opts).unwrap();
        for r in &res.refinement {
            assert!(r.params().iter().all(|v| v.abs() < 1e-12), "{:?}", r.params());
        }
    }

    #[test]
    fn exact_targets_reproduce_exact_ipf() {
        let s = setup(40, 0.05);
        let init = init_particles(&s, 400, 4);
        let hook = exact_terminal(&s);
        let out = approximate_ipf(&s.path, &EmKernel::langevin(0.05), Segment::new(0, 40).unwrap(), &init, None, &cfg(3), 5, Some(&hook)).unwrap();
        let states = s.bridge.run(3).unwrap();
        for i in 1..=3 {
            for t in 1..=40 {
                let got = &out.iterates[i][t - 1];
                let want = &states[i].policies[t];
                for (g, w) in got.params().iter().zip(want.params()) {
                    assert!((g - w).abs() <= 1e-3 * w.abs().max(1e-2), "i={i} t={t}: {g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn quadrature_targets_in_one_dimension() {
        // d = 1, T = 2: the regression target at t = 1 is log M_2^psi(phi_2),
        // checked against a grid integral of the twisted kernel.
        let model = LqgModel::equicorrelated(1, 1.0, 0.0);
        let path = model.path(Schedule::Linear, 2).unwrap();
        let h = 0.3;
        let kernel = EmKernel::langevin(h);
        let seg = Segment::new(0, 2).unwrap();
        let mut pols = alloc::vec![
            QuadraticPolicy::full(&crate::linalg::Matrix::from_element(1, 1, 0.2), &[-0.1], 0.0).unwrap(),
            QuadraticPolicy::full(&crate::linalg::Matrix::from_element(1, 1, 0.4), &[0.3], 0.0).unwrap(),
        ];
        let steps = twisted_steps(h, &mut pols, TwistMode::Exact).unwrap();
        let init: Vec<f64> = (0..30).map(|i| -1.5 + 0.1 * i as f64).collect();
        let sample = propagate_segment(&path, &kernel, seg, &steps, &init, 6, &[rng::IPF_SAMPLE]);
        // terminal targets exactly quadratic: phi_2(x) = -(0.5 x^2 - 0.2 x)
        let targets: Vec<f64> = (0..30).map(|n| {
            let x = sample.state(n, 2)[0];
            -(0.5 * x * x - 0.2 * x)
        }).collect();
        let opts = AdpOptions { h, twist: TwistMode::Exact, mode: PolicyMode::Full, ridge: 0.0 };
        let res = adp_sweep(&sample, &targets, &pols, &opts).unwrap();
        // refinement at t = 1 fits log M_2^psi(phi_2)(x_1), which is quadratic
        for n in 0..30 {
            let x1 = sample.state(n, 1)[0];
            let mut m = [0.0];
            kernel.mean(&path, 2, &[x1], &mut m);
            let (lo, hi, k) = (m[0] - 12.0, m[0] + 12.0, 20_000);
            let dx = (hi - lo) / k as f64;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..=k {
                let y = lo + i as f64 * dx;
                let w = if i == 0 || i == k { 0.5 } else { 1.0 };
                let base = (-(y - m[0]) * (y - m[0]) / (2.0 * h)).exp() * pols[1].log_psi(&[y]).exp();
                num += w * base * (-(0.5 * y * y - 0.2 * y)).exp();
                den += w * base;
            }
            let want = (num / den).ln();
            let got = res.refinement[0].log_psi(&[x1]);
            assert!((got - want).abs() < 1e-6, "x1={x1}: {got} vs {want}");
        }
    }

    #[test]
    fn distance_to_targets_drops_in_two_iterations() {
        let s = setup(40, 0.05);
        let sb = s.bridge.q_marginals(&s.bridge.run(200).unwrap()[200]);
        let reps = 100;
        let mut logw = alloc::vec![alloc::vec![Vec::new(); 3]; 41];
        for rep in 0..reps {
            let init = init_particles(&s, 1000, 100 + rep);
            let out = approximate_ipf(&s.path, &EmKernel::langevin(0.05), Segment::new(0, 40).unwrap(), &init, None, &cfg(2), 200 + rep, None).unwrap();
            for (i, pols) in out.iterates.iter().enumerate() {
                let q = q_marginals(&s, pols);
                for t in 1..=40 {
                    logw[t][i].push(q[t].w2(&sb[t]).unwrap().ln());
                }
            }
        }
        for t in 21..=40 {
            let m0 = stats::median(&logw[t][0]);
            let m2 = stats::median(&logw[t][2]);
            assert!(m2 < m0, "t={t}: {m2} !< {m0}");
        }
    }

    #[test]
    fn reproducible_given_seed() {
        let s = setup(10, 0.2);
        let init = init_particles(&s, 200, 9);
        let c = IpfConfig { max_iters: 4, rejuvenation: Some(0.5), csmc_iters: 2, csmc_particles: 4, ..cfg(4) };
        let run = || approximate_ipf(&s.path, &EmKernel::langevin(0.2), Segment::new(0, 10).unwrap(), &init, None, &c, 11, None).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.policies, b.policies);
        assert_eq!(a.particles, b.particles);
    }

    #[test]
    fn early_stop_fires_on_converged_policies() {
        let s = setup(40, 0.05);
        let init = init_particles(&s, 1000, 12);
        let c = IpfConfig { max_iters: 100, stop: StopRule::EarlyStop(super::super::EarlyStop::default()), ..cfg(100) };
        let out = approximate_ipf(&s.path, &EmKernel::langevin(0.05), Segment::new(0, 1).unwrap(), &init, None, &c, 13, None).unwrap();
        assert!(out.stopped_early, "{:?}", out.ess);
        assert!(out.iterations >= 3 && out.iterations < 100, "{}", out.iterations);
    }
}
