use std::collections::BTreeMap;
use std::path::Path;

use sbs_core::filters::{bootstrap_pf, kalman, sbpf, FilterOutput, LinearSsm};
use sbs_core::linalg;
use sbs_core::stats::{median, variance};

use super::{baseline_particles, mean_times, method_seed, pilot_seed, replicate, timed, Outcome, Series};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Particles of the bootstrap filter probed when matching run times.
const PROBE_PARTICLES: usize = 10_000;

/// Observations as CSV with header `t,y_1,..,y_d` and rows `t = 1..=T`.
pub fn write_observations(ys: &[f64], d: usize) -> String {
    let mut s = String::from("t");
    for i in 1..=d {
        s.push_str(&format!(",y_{i}"));
    }
    s.push('\n');
    for (t, y) in ys.chunks(d).enumerate() {
        s.push_str(&(t + 1).to_string());
        for v in y {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// Reads observations written by [`write_observations`]; rows must be
/// `t = 1..=steps` in order.
pub fn read_observations(path: &Path, d: usize, steps: usize) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|_| Error::FileNotFound(path.to_path_buf()))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut ys = Vec::with_capacity(d * steps);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != d + 1 {
            return Err(Error::MalformedRow { row, reason: format!("expected {} fields, found {}", d + 1, rec.len()) });
        }
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::MalformedRow { row, reason: e.to_string() })?;
        if vals[0] != (i + 1) as f64 {
            return Err(Error::MalformedRow { row, reason: format!("expected t = {}", i + 1) });
        }
        ys.extend_from_slice(&vals[1..]);
    }
    if ys.len() != d * steps {
        return Err(Error::Shape { rows: ys.len() / d.max(1), cols: d, expected_rows: steps, expected_cols: d });
    }
    Ok(ys)
}

fn log_w2_series(f: &FilterOutput, truth: &FilterOutput) -> Result<Vec<f64>> {
    (1..f.means.len())
        .map(|t| Ok(linalg::w2_gaussian(&f.means[t], &f.covs[t], &truth.means[t], &truth.covs[t])?.ln()))
        .collect()
}

fn errors(f: &FilterOutput, truth: &FilterOutput) -> Vec<f64> {
    f.log_likelihood.iter().zip(&truth.log_likelihood).map(|(a, b)| a - b).collect()
}

/// Fraction of time steps where the median ESS fraction of `a` exceeds that of `b`.
fn ess_win_fraction(a: &Series, b: &Series) -> f64 {
    let steps = a.reps[0].len();
    let col = |s: &Series, t: usize| median(&s.reps.iter().map(|r| r[t]).collect::<Vec<_>>());
    (0..steps).filter(|&t| col(a, t) > col(b, t)).count() as f64 / steps as f64
}

pub fn pf_compare(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = &cfg.model;
    let s = &cfg.sampler;
    let n = s.particles;
    let model = LinearSsm::new(m.d, m.alpha, m.h(), m.steps, m.sigma_obs)?;
    let ys = match &m.observations {
        Some(p) => read_observations(p, m.d, m.steps)?,
        None => model.simulate(pilot_seed(cfg.seed, 0)).1,
    };
    let truth = kalman(&model, &ys)?;
    let ipf = s.ipf(m.d);
    let n_bpf = baseline_particles(
        s.baseline,
        n,
        PROBE_PARTICLES,
        || {
            let (r, t) = timed(|| sbpf(&model, &ys, n, &ipf, pilot_seed(cfg.seed, 1)));
            r?;
            Ok(t)
        },
        |k| {
            let (r, t) = timed(|| bootstrap_pf(&model, &ys, k, pilot_seed(cfg.seed, 2)));
            r?;
            Ok(t)
        },
    )?;
    let methods = ["sbpf", "bpf-matched-budget", "bpf-matched-n"];
    let reps = replicate(cfg, |_, seed| {
        let (a, ta) = timed(|| sbpf(&model, &ys, n, &ipf, method_seed(seed, 1)));
        let (b, tb) = timed(|| bootstrap_pf(&model, &ys, n_bpf, method_seed(seed, 2)));
        let (c, tc) = timed(|| bootstrap_pf(&model, &ys, n, method_seed(seed, 3)));
        let secs = BTreeMap::from([(methods[0].to_string(), ta), (methods[1].to_string(), tb), (methods[2].to_string(), tc)]);
        Ok(([a?, b?, c?], secs))
    })?;
    let sizes = [n, n_bpf, n];

    let mut out = Outcome::default();
    out.budgets.insert("sbpf_particles".into(), n);
    out.budgets.insert("bpf_particles".into(), n_bpf);
    out.rep_columns = ["rep", "log_lik_sbpf", "log_lik_bpf_matched_budget", "log_lik_bpf_matched_n", "ipf_iterations_sbpf"]
        .map(String::from)
        .to_vec();
    for (r, (f, _)) in reps.iter().enumerate() {
        let iters: usize = f[0].iterations.iter().sum();
        out.rep_rows.push(vec![
            r as f64,
            f[0].log_likelihood_final(),
            f[1].log_likelihood_final(),
            f[2].log_likelihood_final(),
            iters as f64 / m.steps as f64,
        ]);
    }
    for (k, name) in methods.iter().enumerate() {
        out.series.push(Series::new(name, "ess_fraction", 1, reps.iter().map(|(f, _)| f[k].ess_fraction(sizes[k])).collect()));
        out.series.push(Series::new(name, "log_lik_error", 0, reps.iter().map(|(f, _)| errors(&f[k], &truth)).collect()));
        out.series.push(Series::new(
            name,
            "log_w2",
            1,
            reps.iter().map(|(f, _)| log_w2_series(&f[k], &truth)).collect::<Result<Vec<_>>>()?,
        ));
    }

    let var = |col: &str| variance(&out.column(col).unwrap());
    let (v_sb, v_b, v_n) = (var("log_lik_sbpf"), var("log_lik_bpf_matched_budget"), var("log_lik_bpf_matched_n"));
    let ess = |k: usize| out.series(methods[k], "ess_fraction").unwrap();
    let win_budget = ess_win_fraction(ess(0), ess(1));
    let win_n = ess_win_fraction(ess(0), ess(2));
    out.summary.insert("log_lik_kalman".into(), truth.log_likelihood_final());
    out.summary.insert("var_log_lik_sbpf".into(), v_sb);
    out.summary.insert("var_log_lik_bpf_matched_budget".into(), v_b);
    out.summary.insert("var_log_lik_bpf_matched_n".into(), v_n);
    out.summary.insert("var_ratio_matched_budget".into(), v_b / v_sb);
    out.summary.insert("var_ratio_matched_n".into(), v_n / v_sb);
    out.summary.insert("ess_win_fraction_matched_budget".into(), win_budget);
    out.summary.insert("ess_win_fraction_matched_n".into(), win_n);
    out.summary.insert("ipf_iterations_per_time".into(), sbs_core::stats::mean(&out.column("ipf_iterations_sbpf").unwrap()));
    out.artifacts.push(("observations.csv".into(), write_observations(&ys, m.d)));
    out.rep_times = reps.into_iter().map(|r| r.1).collect();
    out.timings = mean_times(&out.rep_times);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{defaults, BaselineSpec, ExperimentId};

    #[test]
    fn observations_round_trip_through_csv() {
        let ys = vec![0.25, -1.5, 3.0, 1e-3];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.csv");
        std::fs::write(&p, write_observations(&ys, 2)).unwrap();
        assert_eq!(read_observations(&p, 2, 2).unwrap(), ys);
        assert!(matches!(read_observations(&p, 2, 3), Err(Error::Shape { .. })));
        std::fs::write(&p, "t,y_1,y_2\n1,0.5,x\n").unwrap();
        assert!(matches!(read_observations(&p, 2, 1), Err(Error::MalformedRow { row: 2, .. })));
    }

    #[test]
    fn small_comparison_runs() {
        let mut c = defaults(ExperimentId::PfCompare);
        c.reps = 3;
        c.model.steps = 5;
        c.model.tau = 0.125;
        c.sampler.particles = 50;
        c.sampler.max_iters = 3;
        c.sampler.baseline = BaselineSpec::Fixed(500);
        let o = pf_compare(&c).unwrap();
        assert_eq!(o.budgets["bpf_particles"], 500);
        let f = o.series("sbpf", "ess_fraction").unwrap();
        assert_eq!((f.reps.len(), f.reps[0].len()), (3, 5));
        assert!(f.reps.iter().flatten().all(|&e| e > 0.0 && e <= 1.0 + 1e-12));
        assert!(o.summary("var_log_lik_sbpf").is_finite());
    }
}
