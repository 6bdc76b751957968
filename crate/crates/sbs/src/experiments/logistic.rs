use std::collections::BTreeMap;

use sbs_core::ssb::{smc_sampler, ssb_sampler};
use sbs_core::stats::mean;
use sbs_core::targets::LogisticModel;

use super::{baseline_particles, mean_times, method_seed, pilot_seed, replicate, sd, timed, Outcome, Series};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::heart::load_heart_dataset;

pub fn logistic(cfg: &ExperimentConfig) -> Result<Outcome> {
    let path = cfg.model.dataset.as_ref().ok_or_else(|| Error::schema("model.dataset", "missing"))?;
    run_logistic(cfg, &load_heart_dataset(path)?)
}

/// SSB against SMC on the annealing path from the prior to the posterior of `model`.
pub fn run_logistic(cfg: &ExperimentConfig, model: &LogisticModel) -> Result<Outcome> {
    let m = &cfg.model;
    let s = &cfg.sampler;
    let d = model.dim();
    let path = model.path(m.schedule(), m.steps)?;
    let kernel = m.kernel();
    let scfg = s.ssb(d);
    let n_smc = baseline_particles(
        s.baseline,
        s.particles,
        s.particles,
        || {
            let (r, t) = timed(|| ssb_sampler(&path, &kernel, &scfg, pilot_seed(cfg.seed, 1)));
            r?;
            Ok(t)
        },
        |n| {
            let (r, t) = timed(|| smc_sampler(&path, &kernel, n, s.resample(), pilot_seed(cfg.seed, 2)));
            r?;
            Ok(t)
        },
    )?;
    let reps = replicate(cfg, |_, seed| {
        let (a, ta) = timed(|| ssb_sampler(&path, &kernel, &scfg, method_seed(seed, 1)));
        let (b, tb) = timed(|| smc_sampler(&path, &kernel, n_smc, s.resample(), method_seed(seed, 2)));
        Ok((a?, b?, BTreeMap::from([("ssb".to_string(), ta), ("smc".to_string(), tb)])))
    })?;

    let mut out = Outcome::default();
    out.budgets.insert("ssb_particles".into(), s.particles);
    out.budgets.insert("smc_particles".into(), n_smc);
    out.rep_columns = ["rep", "log_z_ssb", "log_z_smc", "ipf_iterations"].map(String::from).to_vec();
    for (r, (a, b, _)) in reps.iter().enumerate() {
        let iters: usize = a.segments.iter().map(|g| g.iterations).sum();
        out.rep_rows.push(vec![r as f64, a.ensemble.log_z_final(), b.log_z_final(), iters as f64]);
    }
    out.series.push(Series::new("ssb", "log_z", 0, reps.iter().map(|r| r.0.ensemble.log_z.clone()).collect()));
    out.series.push(Series::new("smc", "log_z", 0, reps.iter().map(|r| r.1.log_z.clone()).collect()));
    out.series.push(Series::new("ssb", "ess", 0, reps.iter().map(|r| r.0.ensemble.ess.clone()).collect()));
    out.series.push(Series::new("smc", "ess", 0, reps.iter().map(|r| r.1.ess.clone()).collect()));
    let (za, zb) = (out.column("log_z_ssb").unwrap(), out.column("log_z_smc").unwrap());
    out.summary.insert("log_z_ssb_mean".into(), mean(&za));
    out.summary.insert("log_z_ssb_sd".into(), sd(&za));
    out.summary.insert("log_z_smc_mean".into(), mean(&zb));
    out.summary.insert("log_z_smc_sd".into(), sd(&zb));
    out.summary.insert("sd_ratio_smc_ssb".into(), sd(&zb) / sd(&za));
    out.rep_times = reps.into_iter().map(|r| r.2).collect();
    out.timings = mean_times(&out.rep_times);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{defaults, BaselineSpec, ExperimentId};
    use crate::heart::parse_heart;

    #[test]
    fn runs_on_the_fixture_rows() {
        let data = parse_heart(include_str!("../../tests/fixtures/heart_sample.csv").as_bytes()).unwrap();
        let model = LogisticModel::new(data.design, data.response, data.dim).unwrap();
        let mut c = defaults(ExperimentId::Logistic);
        c.reps = 2;
        c.model.steps = 5;
        c.sampler.particles = 100;
        c.sampler.max_iters = 3;
        c.sampler.baseline = BaselineSpec::Fixed(150);
        let o = run_logistic(&c, &model).unwrap();
        assert_eq!(o.budgets["smc_particles"], 150);
        assert!(o.column("log_z_ssb").unwrap().iter().all(|z| z.is_finite() && *z < 0.0));
    }
}
