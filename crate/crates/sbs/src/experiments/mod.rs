//! Experiment drivers.
//!
//! Every driver returns an [`Outcome`]: one row of scalars per replication,
//! per-time series, summary statistics, and the wall-clock measurements that
//! are kept apart from the numeric outputs. Replication `r` runs on the seed
//! `derive(master, [REPLICATION, r])`; methods inside a replication get
//! `derive(rep_seed, [k])` with a fixed `k` per method.

mod filtering;
mod logistic;
mod lqg;
mod transport;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use sbs_core::rng;

use crate::config::{BaselineSpec, ExperimentConfig, ExperimentId};
use crate::error::Result;

pub use filtering::{pf_compare, read_observations, write_observations};
pub use logistic::{logistic, run_logistic};
pub use lqg::{flow_transport, lqg_highdim, lqg_ssb, lqg_two_marginal};
pub use transport::ot_brownian;

/// Values of one metric over time, one row per replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub method: String,
    pub metric: String,
    /// Time index of the first column.
    pub t0: usize,
    pub reps: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(method: &str, metric: &str, t0: usize, reps: Vec<Vec<f64>>) -> Self {
        Self { method: method.into(), metric: metric.into(), t0, reps }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub rep_columns: Vec<String>,
    pub rep_rows: Vec<Vec<f64>>,
    pub series: Vec<Series>,
    pub summary: BTreeMap<String, f64>,
    /// Wall-clock seconds; never written to the CSV files.
    pub timings: BTreeMap<String, f64>,
    /// Per-replication wall-clock seconds by method.
    pub rep_times: Vec<BTreeMap<String, f64>>,
    /// Particle counts resolved at run time (matched-time baselines).
    pub budgets: BTreeMap<String, usize>,
    /// Extra text files written next to the tables.
    pub artifacts: Vec<(String, String)>,
}

impl Outcome {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.rep_columns.iter().position(|c| c == name)?;
        Some(self.rep_rows.iter().map(|r| r[i]).collect())
    }

    pub fn series(&self, method: &str, metric: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.method == method && s.metric == metric)
    }

    pub fn summary(&self, key: &str) -> f64 {
        self.summary.get(key).copied().unwrap_or(f64::NAN)
    }
}

pub fn rep_seed(master: u64, rep: usize) -> u64 {
    rng::derive(master, &[rng::REPLICATION, rep as u64])
}

pub(crate) fn method_seed(rep_seed: u64, k: u64) -> u64 {
    rng::derive(rep_seed, &[k])
}

/// Seed of the `k`-th timing pilot.
pub(crate) fn pilot_seed(master: u64, k: u64) -> u64 {
    rng::derive(master, &[rng::TRIAL, k])
}

/// Runs `f` on every replication in parallel, results in replication order.
pub(crate) fn replicate<T, F>(cfg: &ExperimentConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync + Send,
{
    (0..cfg.reps).into_par_iter().map(|r| f(r, rep_seed(cfg.seed, r))).collect()
}

pub(crate) fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Baseline particle count. For matched time, `target_seconds` is the timed
/// cost of the method being matched and `probe(n)` times the baseline with
/// `n` particles; the count is scaled linearly from one probe.
pub(crate) fn baseline_particles(
    spec: BaselineSpec,
    n: usize,
    probe_n: usize,
    target_seconds: impl FnOnce() -> Result<f64>,
    probe: impl FnOnce(usize) -> Result<f64>,
) -> Result<usize> {
    Ok(match spec {
        BaselineSpec::MatchedN => n,
        BaselineSpec::Fixed(m) => m,
        BaselineSpec::MatchedTime => {
            let target = target_seconds()?;
            let pilot = probe(probe_n)?;
            ((probe_n as f64 * target / pilot.max(1e-9)).round() as usize).max(2)
        }
    })
}

pub(crate) fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub(crate) fn sd(xs: &[f64]) -> f64 {
    sbs_core::stats::variance(xs).sqrt()
}

/// Mean of each key over replications.
pub(crate) fn mean_times(rep_times: &[BTreeMap<String, f64>]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for t in rep_times {
        for (k, v) in t {
            *out.entry(format!("{k}_seconds_mean")).or_insert(0.0) += v / rep_times.len() as f64;
        }
    }
    out
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.experiment {
        ExperimentId::LqgTwoMarginal => lqg_two_marginal(cfg),
        ExperimentId::LqgSsb => lqg_ssb(cfg),
        ExperimentId::LqgHighdim => lqg_highdim(cfg),
        ExperimentId::OtBrownian => ot_brownian(cfg),
        ExperimentId::FlowTransport => flow_transport(cfg),
        ExperimentId::PfCompare => pf_compare(cfg),
        ExperimentId::Logistic => logistic(cfg),
    }
}
