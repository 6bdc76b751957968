use std::collections::BTreeMap;

use sbs_core::connections::{flow_cost_estimate, simulate_lqg_flow};
use sbs_core::ipf::{approximate_ipf, prop1_bound_check, propagate_segment, twisted_steps, IpfConfig, LqgBridge, Moments, Segment};
use sbs_core::kernels::EmKernel;
use sbs_core::linalg;
use sbs_core::policy::param_count;
use sbs_core::rng;
use sbs_core::ssb::{initial_particles, smc_sampler, ssb_sampler, SsbConfig, SsbOutput};
use sbs_core::targets::{LqgModel, LqgPath};

use super::{baseline_particles, mean_times, method_seed, pilot_seed, replicate, rmse, sd, timed, Outcome, Series};
use crate::config::{ExperimentConfig, ReferenceKind};
use crate::error::Result;
use crate::policy_io::write_policies;

/// Iterations of exact IPF taken as the fixed point.
pub const FIXED_POINT_ITERS: usize = 200;

pub(crate) struct Lqg {
    pub model: LqgModel,
    pub path: LqgPath,
    pub kernel: EmKernel,
    /// `pi_t` for `t = 0..=T`.
    pub truth: Vec<Moments>,
    pub log_z: Vec<f64>,
}

pub(crate) fn setup(cfg: &ExperimentConfig) -> Result<Lqg> {
    let m = &cfg.model;
    let model = LqgModel::equicorrelated(m.d, m.xi, m.rho);
    let path = model.path(m.schedule(), m.steps)?;
    let mut truth = Vec::with_capacity(m.steps + 1);
    let mut log_z = Vec::with_capacity(m.steps + 1);
    for t in 0..=m.steps {
        let lambda = m.schedule().value(t, m.steps)?;
        let (mu, sigma) = model.intermediate(lambda)?;
        truth.push(Moments::new(mu, sigma));
        log_z.push(model.log_normconst(lambda)?);
    }
    Ok(Lqg { model, path, kernel: m.kernel(), truth, log_z })
}

/// `log W2` between the moment-matched Gaussian of `xs` and `m`.
pub(crate) fn log_w2_cloud(xs: &[f64], d: usize, m: &Moments) -> Result<f64> {
    let (mu, sigma) = linalg::moments(xs, d);
    Ok(linalg::w2_gaussian(&mu, &sigma, &m.mean, &m.cov)?.ln())
}

fn bridge(cfg: &ExperimentConfig, lq: &Lqg) -> Result<LqgBridge> {
    let m = &cfg.model;
    let kernels = match m.reference {
        ReferenceKind::Langevin => lq.model.langevin_kernels(m.schedule(), m.steps, m.h())?,
        ReferenceKind::Brownian => lq.model.brownian_kernels(m.steps, m.h()),
    };
    Ok(LqgBridge { initial: lq.truth[0].clone(), terminal: lq.truth[m.steps].clone(), kernels })
}

pub fn lqg_two_marginal(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = &cfg.model;
    let s = &cfg.sampler;
    let (d, steps) = (m.d, m.steps);
    let lq = setup(cfg)?;
    let bridge = bridge(cfg, &lq)?;
    let states = bridge.run(FIXED_POINT_ITERS.max(s.max_iters))?;
    let fixed = bridge.q_marginals(&states[FIXED_POINT_ITERS]);
    let mut out = Outcome::default();

    let mut p_gap: f64 = 0.0;
    let mut q_gap: f64 = 0.0;
    for (i, state) in states.iter().enumerate().take(s.max_iters + 1) {
        let q = bridge.q_marginals(state);
        let row = (0..=steps).map(|t| Ok(fixed[t].w2(&q[t])?.ln())).collect::<Result<Vec<_>>>()?;
        out.series.push(Series::new(&format!("exact-i{i}"), "log_w2", 0, vec![row]));
        if i > 0 {
            p_gap = p_gap.max(bridge.p_marginals(state)[steps].w2(&bridge.terminal)?);
            q_gap = q_gap.max(q[0].w2(&bridge.initial)?);
        }
    }
    out.summary.insert("exact_max_terminal_w2_p".into(), p_gap);
    out.summary.insert("exact_max_initial_w2_q".into(), q_gap);
    for (label, eps) in [("1e-2", 1e-2), ("1e-3", 1e-3), ("1e-6", 1e-6)] {
        let r = prop1_bound_check(&bridge, eps, FIXED_POINT_ITERS, 10_000)?;
        out.summary.insert(format!("prop1_k_star_{label}"), r.k_star as f64);
        out.summary.insert(format!("prop1_bound_{label}"), r.bound as f64);
    }
    out.summary.insert("bridge_kl".into(), sbs_core::ipf::prop1::bridge_kl(&bridge, FIXED_POINT_ITERS)?);

    let ipf = IpfConfig { keep_iterates: true, ..s.ipf(d) };
    let seg = Segment::new(0, steps)?;
    let reps = replicate(cfg, |_, seed| {
        let init = initial_particles(&lq.path, s.particles, method_seed(seed, 1));
        let run = approximate_ipf(&lq.path, &lq.kernel, seg, &init, None, &ipf, method_seed(seed, 2), None)?;
        let mut per_iter = Vec::with_capacity(run.iterates.len());
        for (i, pols) in run.iterates.iter().enumerate() {
            let mut pols = pols.clone();
            let twist = twisted_steps(m.h(), &mut pols, ipf.twist)?;
            let sample = propagate_segment(&lq.path, &lq.kernel, seg, &twist, &run.particles, method_seed(seed, 3), &[rng::TRIAL, i as u64]);
            per_iter.push((0..=steps).map(|t| log_w2_cloud(&sample.column(t), d, &fixed[t])).collect::<Result<Vec<_>>>()?);
        }
        Ok((run.iterations, per_iter))
    })?;
    let common = reps.iter().map(|r| r.1.len()).min().unwrap_or(0);
    for i in 0..common {
        out.series.push(Series::new(&format!("approx-i{i}"), "log_w2", 0, reps.iter().map(|r| r.1[i].clone()).collect()));
    }
    out.rep_columns = ["rep", "iterations", "log_w2_terminal", "log_w2_mean"].map(String::from).to_vec();
    for (r, (iters, per_iter)) in reps.iter().enumerate() {
        let last = per_iter.last().unwrap();
        out.rep_rows.push(vec![r as f64, *iters as f64, last[steps], last.iter().sum::<f64>() / last.len() as f64]);
    }
    Ok(out)
}

struct SsbRep {
    ssb: SsbOutput,
    smc_log_z: Vec<f64>,
    smc_ess: Vec<f64>,
    seconds: BTreeMap<String, f64>,
}

fn smc_seconds(lq: &Lqg, cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<f64> {
    let (r, t) = timed(|| smc_sampler(&lq.path, &lq.kernel, n, cfg.sampler.resample(), seed));
    r?;
    Ok(t)
}

fn ssb_seconds(lq: &Lqg, scfg: &SsbConfig, seed: u64) -> Result<f64> {
    let (r, t) = timed(|| ssb_sampler(&lq.path, &lq.kernel, scfg, seed));
    r?;
    Ok(t)
}

fn errors(log_z: &[f64], truth: &[f64]) -> Vec<f64> {
    log_z.iter().zip(truth).map(|(a, b)| a - b).collect()
}

pub fn lqg_ssb(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = &cfg.sampler;
    let steps = cfg.model.steps;
    let lq = setup(cfg)?;
    let scfg = s.ssb(cfg.model.d);
    let n_smc = baseline_particles(
        s.baseline,
        s.particles,
        s.particles,
        || ssb_seconds(&lq, &scfg, pilot_seed(cfg.seed, 1)),
        |n| smc_seconds(&lq, cfg, n, pilot_seed(cfg.seed, 2)),
    )?;
    let reps = replicate(cfg, |_, seed| {
        let (ssb, t_ssb) = timed(|| ssb_sampler(&lq.path, &lq.kernel, &scfg, method_seed(seed, 1)));
        let (smc, t_smc) = timed(|| smc_sampler(&lq.path, &lq.kernel, n_smc, s.resample(), method_seed(seed, 2)));
        let smc = smc?;
        let seconds = BTreeMap::from([("ssb".to_string(), t_ssb), ("smc".to_string(), t_smc)]);
        Ok(SsbRep { ssb: ssb?, smc_log_z: smc.log_z, smc_ess: smc.ess, seconds })
    })?;

    let mut out = Outcome::default();
    out.budgets.insert("ssb_particles".into(), s.particles);
    out.budgets.insert("smc_particles".into(), n_smc);
    out.rep_columns = ["rep", "log_z_ssb", "log_z_smc", "error_ssb", "error_smc", "ipf_iterations"].map(String::from).to_vec();
    if s.rerun {
        out.rep_columns.push("log_z_rerun".into());
    }
    let truth = lq.log_z[steps];
    for (r, rep) in reps.iter().enumerate() {
        let (a, b) = (rep.ssb.ensemble.log_z_final(), *rep.smc_log_z.last().unwrap());
        let iters: usize = rep.ssb.segments.iter().map(|g| g.iterations).sum();
        let mut row = vec![r as f64, a, b, a - truth, b - truth, iters as f64];
        if let Some(z) = rep.ssb.rerun_log_z {
            row.push(z);
        }
        out.rep_rows.push(row);
    }
    out.series.push(Series::new("ssb", "log_z_error", 0, reps.iter().map(|r| errors(&r.ssb.ensemble.log_z, &lq.log_z)).collect()));
    out.series.push(Series::new("smc", "log_z_error", 0, reps.iter().map(|r| errors(&r.smc_log_z, &lq.log_z)).collect()));
    out.series.push(Series::new("ssb", "ess", 0, reps.iter().map(|r| r.ssb.ensemble.ess.clone()).collect()));
    out.series.push(Series::new("smc", "ess", 0, reps.iter().map(|r| r.smc_ess.clone()).collect()));
    out.series.push(Series::new(
        "ssb",
        "ipf_iterations",
        1,
        reps.iter().map(|r| r.ssb.iterations_per_time(steps)[1..].iter().map(|&i| i as f64).collect()).collect(),
    ));

    let e_ssb = out.column("error_ssb").unwrap();
    let e_smc = out.column("error_smc").unwrap();
    out.summary.insert("log_z_true".into(), truth);
    out.summary.insert("rmse_ssb".into(), rmse(&e_ssb));
    out.summary.insert("rmse_smc".into(), rmse(&e_smc));
    out.summary.insert("rmse_ratio".into(), rmse(&e_smc) / rmse(&e_ssb));
    let iters = out.column("ipf_iterations").unwrap();
    out.summary.insert("ipf_iterations_per_time".into(), iters.iter().sum::<f64>() / (iters.len() * steps) as f64);
    if s.rerun {
        let e: Vec<f64> = out.column("log_z_rerun").unwrap().iter().map(|z| z - truth).collect();
        out.summary.insert("rmse_rerun".into(), rmse(&e));
    }
    out.artifacts.push(("policies.txt".into(), write_policies(&reps[0].ssb.policies)));
    out.rep_times = reps.into_iter().map(|r| r.seconds).collect();
    out.timings = mean_times(&out.rep_times);
    let ratio = out.timings["ssb_seconds_mean"] / out.timings["smc_seconds_mean"];
    out.timings.insert("time_ratio_ssb_smc".into(), ratio);
    Ok(out)
}

pub fn lqg_highdim(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = &cfg.sampler;
    let d = cfg.model.d;
    let steps = cfg.model.steps;
    let lq = setup(cfg)?;
    let variants: Vec<(String, SsbConfig)> = s
        .variants
        .iter()
        .map(|v| {
            let mut c = s.ssb(d);
            c.ipf.twist = v.mode();
            (v.name().to_string(), c)
        })
        .collect();
    let n_smc = baseline_particles(
        s.baseline,
        s.particles,
        s.particles,
        || ssb_seconds(&lq, &variants[0].1, pilot_seed(cfg.seed, 1)),
        |n| smc_seconds(&lq, cfg, n, pilot_seed(cfg.seed, 2)),
    )?;
    let reps = replicate(cfg, |_, seed| {
        let mut log_z = Vec::new();
        let mut iters = Vec::new();
        let mut seconds = BTreeMap::new();
        let mut first_policies = None;
        for (k, (name, c)) in variants.iter().enumerate() {
            let (o, t) = timed(|| ssb_sampler(&lq.path, &lq.kernel, c, method_seed(seed, 10 + k as u64)));
            let o = o?;
            log_z.push(o.ensemble.log_z_final());
            iters.push(o.segments.iter().map(|g| g.iterations).sum::<usize>() as f64);
            seconds.insert(name.clone(), t);
            first_policies.get_or_insert(o.policies);
        }
        let (smc, t) = timed(|| smc_sampler(&lq.path, &lq.kernel, n_smc, s.resample(), method_seed(seed, 2)));
        log_z.push(smc?.log_z_final());
        seconds.insert("smc".into(), t);
        Ok((log_z, iters, seconds, first_policies.unwrap()))
    })?;

    let truth = lq.log_z[steps];
    let mut out = Outcome::default();
    out.budgets.insert("ssb_particles".into(), s.particles);
    out.budgets.insert("smc_particles".into(), n_smc);
    out.rep_columns.push("rep".into());
    for (name, _) in &variants {
        out.rep_columns.push(format!("log_z_{name}"));
    }
    out.rep_columns.push("log_z_smc".into());
    for (name, _) in &variants {
        out.rep_columns.push(format!("ipf_iterations_{name}"));
    }
    for (r, (log_z, iters, _, _)) in reps.iter().enumerate() {
        let mut row = vec![r as f64];
        row.extend(log_z);
        row.extend(iters);
        out.rep_rows.push(row);
    }
    let err = |col: &str| -> Vec<f64> { out.column(col).unwrap().iter().map(|z| z - truth).collect() };
    let rmse_smc = rmse(&err("log_z_smc"));
    let mut summary = BTreeMap::from([("log_z_true".to_string(), truth), ("rmse_smc".to_string(), rmse_smc)]);
    for (name, _) in &variants {
        let r = rmse(&err(&format!("log_z_{name}")));
        summary.insert(format!("rmse_{name}"), r);
        summary.insert(format!("rmse_ratio_{name}"), rmse_smc / r);
    }
    let mode = s.policy_mode();
    summary.insert("policy_params_per_time".into(), param_count(mode, d) as f64);
    out.summary = summary;
    out.artifacts.push(("policies.txt".into(), write_policies(&reps[0].3)));
    out.rep_times = reps.into_iter().map(|r| r.2).collect();
    out.timings = mean_times(&out.rep_times);
    Ok(out)
}

pub fn flow_transport(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = &cfg.model;
    let s = &cfg.sampler;
    let lq = setup(cfg)?;
    let (exact, t_exact) = timed(|| simulate_lqg_flow(&lq.model, m.tau, m.steps, s.flow_particles, pilot_seed(cfg.seed, 3)));
    let exact = exact?;
    let (mu, sigma) = &exact.terminal_moments;
    let terminal = &lq.truth[m.steps];
    let exact_w2 = linalg::w2_gaussian(mu, sigma, &terminal.mean, &terminal.cov)?;

    let scfg = SsbConfig { keep_states: true, ..s.ssb(m.d) };
    let reps = replicate(cfg, |_, seed| {
        let (o, t) = timed(|| ssb_sampler(&lq.path, &lq.kernel, &scfg, method_seed(seed, 1)));
        let o = o?;
        let e = &o.ensemble;
        let cost = flow_cost_estimate(&o.policies, &e.slices, Some(&e.slice_log_weights), m.h())?;
        Ok((cost, e.log_z_final(), BTreeMap::from([("ssb".to_string(), t)])))
    })?;
    let mut out = Outcome::default();
    out.rep_columns = ["rep", "flow_cost_ssb", "log_z_ssb"].map(String::from).to_vec();
    for (r, (c, z, _)) in reps.iter().enumerate() {
        out.rep_rows.push(vec![r as f64, *c, *z]);
    }
    let costs = out.column("flow_cost_ssb").unwrap();
    out.summary.insert("flow_cost_exact".into(), exact.cost);
    out.summary.insert("exact_terminal_w2".into(), exact_w2);
    out.summary.insert("flow_cost_ssb_mean".into(), sbs_core::stats::mean(&costs));
    out.summary.insert("flow_cost_ssb_sd".into(), sd(&costs));
    out.budgets.insert("flow_particles".into(), s.flow_particles);
    out.rep_times = reps.into_iter().map(|r| r.2).collect();
    out.timings = mean_times(&out.rep_times);
    out.timings.insert("exact_flow_seconds".into(), t_exact);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{defaults, ExperimentId, StopKind};

    fn small(id: ExperimentId) -> ExperimentConfig {
        let mut c = defaults(id);
        c.reps = 2;
        c.model.steps = 6;
        c.model.tau = 0.3;
        c.sampler.particles = 100;
        c.sampler.max_iters = 3;
        c.sampler.stop = StopKind::Fixed;
        c
    }

    #[test]
    fn truth_matches_closed_form_endpoints() {
        let lq = setup(&defaults(ExperimentId::LqgSsb)).unwrap();
        assert_eq!(lq.log_z[0], 0.0);
        assert_eq!(lq.truth[0].mean.as_slice(), &[0.0, 0.0]);
        assert_eq!(lq.truth.len(), 41);
    }

    #[test]
    fn two_marginal_tables_have_one_row_per_rep() {
        let o = lqg_two_marginal(&small(ExperimentId::LqgTwoMarginal)).unwrap();
        assert_eq!(o.rep_rows.len(), 2);
        assert!(o.summary("exact_max_terminal_w2_p") < 1e-10);
        assert!(o.summary("exact_max_initial_w2_q") < 1e-10);
        assert_eq!(o.series("approx-i0", "log_w2").unwrap().reps.len(), 2);
        assert_eq!(o.series("exact-i3", "log_w2").unwrap().reps[0].len(), 7);
    }

    #[test]
    fn ssb_driver_reports_errors_against_the_truth() {
        let o = lqg_ssb(&small(ExperimentId::LqgSsb)).unwrap();
        let z = o.column("log_z_ssb").unwrap();
        let e = o.column("error_ssb").unwrap();
        assert!((z[0] - e[0] - o.summary("log_z_true")).abs() < 1e-12);
        assert_eq!(o.budgets["smc_particles"], 100);
        assert_eq!(o.series("ssb", "ipf_iterations").unwrap().reps[0], vec![3.0; 6]);
    }

    #[test]
    fn highdim_emits_diagonal_policies() {
        let mut c = small(ExperimentId::LqgHighdim);
        c.model.d = 8;
        c.sampler.baseline = crate::config::BaselineSpec::MatchedN;
        let o = lqg_highdim(&c).unwrap();
        assert_eq!(o.summary("policy_params_per_time"), 17.0);
        let p = crate::policy_io::read_policies(&o.artifacts[0].1).unwrap();
        assert!(p.policies.iter().all(|q| q.mode() == sbs_core::policy::PolicyMode::Diagonal));
        assert!(o.column("log_z_taylor1").is_some());
    }
}
