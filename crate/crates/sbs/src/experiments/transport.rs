use std::collections::BTreeMap;

use sbs_core::connections::{w2_upper_estimate, CoupledSample};
use sbs_core::ipf::{approximate_ipf, propagate_segment, twisted_steps, Segment};
use sbs_core::linalg;
use sbs_core::rng;
use sbs_core::ssb::initial_particles;

use super::lqg::setup;
use super::{mean_times, method_seed, replicate, sd, timed, Outcome};
use crate::config::ExperimentConfig;
use crate::error::Result;

/// Endpoint-coupling upper bound on `W2(pi_0, pi_T)` from a bridge between
/// the prior and the posterior, usually with a Brownian reference.
pub fn ot_brownian(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = &cfg.model;
    let s = &cfg.sampler;
    let (d, steps) = (m.d, m.steps);
    let lq = setup(cfg)?;
    let (p0, pt) = (&lq.truth[0], &lq.truth[steps]);
    let exact = p0.w2(pt)?;
    let ipf = s.ipf(d);
    let seg = Segment::new(0, steps)?;
    let reps = replicate(cfg, |_, seed| {
        let (res, t) = timed(|| -> Result<_> {
            let init = initial_particles(&lq.path, s.particles, method_seed(seed, 1));
            let run = approximate_ipf(&lq.path, &lq.kernel, seg, &init, None, &ipf, method_seed(seed, 2), None)?;
            let mut pols = run.policies.clone();
            let twist = twisted_steps(m.h(), &mut pols, ipf.twist)?;
            let sample = propagate_segment(&lq.path, &lq.kernel, seg, &twist, &run.particles, method_seed(seed, 3), &[rng::TRIAL]);
            let (x0, xt) = (sample.column(0), sample.terminal());
            let est = w2_upper_estimate(&CoupledSample::new(d, x0.clone(), xt.clone())?);
            let (m0, c0) = linalg::moments(&x0, d);
            let (mt, ct) = linalg::moments(&xt, d);
            let fitted = linalg::w2_gaussian(&m0, &c0, &mt, &ct)?;
            Ok((est.value, est.squared, fitted, run.iterations))
        });
        Ok((res?, BTreeMap::from([("ipf".to_string(), t)])))
    })?;
    let mut out = Outcome::default();
    out.rep_columns = ["rep", "w2_estimate", "w2_squared", "w2_fitted_marginals", "iterations"].map(String::from).to_vec();
    for (r, ((v, sq, f, it), _)) in reps.iter().enumerate() {
        out.rep_rows.push(vec![r as f64, *v, *sq, *f, *it as f64]);
    }
    let w2 = out.column("w2_estimate").unwrap();
    out.summary.insert("w2_exact".into(), exact);
    out.summary.insert("w2_estimate_mean".into(), sbs_core::stats::mean(&w2));
    out.summary.insert("w2_estimate_sd".into(), sd(&w2));
    let bound_holds = reps.iter().filter(|((v, _, f, _), _)| v >= f).count();
    out.summary.insert("coupling_bound_fraction".into(), bound_holds as f64 / reps.len() as f64);
    out.rep_times = reps.into_iter().map(|r| r.1).collect();
    out.timings = mean_times(&out.rep_times);
    Ok(out)
}
