//! Run outputs.
//!
//! A run directory holds:
//!
//! - `reps.csv`: one row of scalars per replication;
//! - `series.csv`: per-time values in long form (`method,metric,rep,t,value`);
//! - `aggregate.csv`: nearest-rank median and 5%/95% quantiles over replications;
//! - `summary.json`: summary statistics and per-replication estimates;
//! - `manifest.json`: resolved configuration, seeds, `git describe`, wall times;
//! - `config.toml`: a configuration that reproduces the run;
//! - experiment-specific files such as `policies.txt` or `observations.csv`.
//!
//! Everything except `manifest.json` depends only on the configuration and
//! the seed (and, for matched-time baselines, on the resolved particle
//! count recorded in `config.toml`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::config::{to_toml, BaselineSpec, ExperimentConfig};
use crate::error::Result;
use crate::experiments::{rep_seed, Outcome};
use sbs_core::stats::{median, quantile_nearest_rank};

/// Environment variable overriding the configured output directory.
pub const OUT_ENV: &str = "SBS_OUT";

/// Output directory: the command-line value, else `SBS_OUT`, else the config.
pub fn output_dir(cli: Option<&Path>, env: Option<OsString>, cfg: &ExperimentConfig) -> PathBuf {
    match (cli, env) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
        _ => cfg.out.clone(),
    }
}

/// FNV-1a of the resolved configuration text without the output
/// directory, as 16 hex digits.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let c = ExperimentConfig { out: PathBuf::new(), ..cfg.clone() };
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in to_toml(&c).bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// The configuration with a matched-time baseline replaced by the particle
/// count it resolved to, so that re-running it repeats the run exactly.
pub fn rerun_config(cfg: &ExperimentConfig, outcome: &Outcome) -> ExperimentConfig {
    let mut c = cfg.clone();
    if c.sampler.baseline == BaselineSpec::MatchedTime {
        let resolved = ["smc_particles", "bpf_particles"].iter().find_map(|k| outcome.budgets.get(*k));
        if let Some(&n) = resolved {
            c.sampler.baseline = BaselineSpec::Fixed(n);
        }
    }
    c
}

fn num(x: f64) -> String {
    x.to_string()
}

pub fn reps_csv(o: &Outcome) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&o.rep_columns)?;
    for row in &o.rep_rows {
        w.write_record(row.iter().map(|&x| num(x)))?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

pub fn series_csv(o: &Outcome) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "metric", "rep", "t", "value"])?;
    for s in &o.series {
        for (r, row) in s.reps.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                w.write_record([s.method.clone(), s.metric.clone(), r.to_string(), (s.t0 + j).to_string(), num(v)])?;
            }
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

pub fn aggregate_csv(o: &Outcome) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "metric", "t", "reps", "median", "q05", "q95"])?;
    for s in &o.series {
        let len = s.reps.iter().map(Vec::len).min().unwrap_or(0);
        for j in 0..len {
            let col: Vec<f64> = s.reps.iter().map(|r| r[j]).collect();
            w.write_record([
                s.method.clone(),
                s.metric.clone(),
                (s.t0 + j).to_string(),
                col.len().to_string(),
                num(median(&col)),
                num(quantile_nearest_rank(&col, 0.05)),
                num(quantile_nearest_rank(&col, 0.95)),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

fn rep_values(o: &Outcome, r: usize) -> Map<String, Value> {
    o.rep_columns.iter().zip(&o.rep_rows[r]).skip(1).map(|(k, &v)| (k.clone(), json!(v))).collect()
}

pub fn summary_json(cfg: &ExperimentConfig, o: &Outcome) -> Value {
    let hash = config_hash(cfg);
    let reps: Vec<Value> = (0..o.rep_rows.len())
        .map(|r| json!({ "rep": r, "seed": rep_seed(cfg.seed, r), "config_hash": hash, "estimates": rep_values(o, r) }))
        .collect();
    let mut v = json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "reps": cfg.reps,
        "config_hash": hash,
        "summary": o.summary,
        "budgets": o.budgets,
        "replications": reps,
    });
    if o.rep_columns.iter().any(|c| c == "log_z_ssb" || c.starts_with("log_z_exact") || c.starts_with("log_z_taylor")) {
        v["notes"] = json!({
            "log_z_ssb": "not unbiased: the policies are learned from the particles that estimate the constant",
            "log_z_rerun": "unbiased: frozen policies on fresh particles",
        });
    }
    v
}

pub fn manifest_json(cfg: &ExperimentConfig, o: &Outcome, wall_seconds: f64) -> Result<Value> {
    let reps: Vec<Value> = o
        .rep_times
        .iter()
        .enumerate()
        .map(|(r, t)| json!({ "rep": r, "seed": rep_seed(cfg.seed, r), "seconds": t }))
        .collect();
    Ok(json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "reps": cfg.reps,
        "config": serde_json::to_value(cfg)?,
        "config_hash": config_hash(cfg),
        "rerun_config": "config.toml",
        "git_describe": git_describe(),
        "version": env!("CARGO_PKG_VERSION"),
        "threads": rayon::current_num_threads(),
        "wall_seconds": wall_seconds,
        "timings": o.timings,
        "budgets": o.budgets,
        "replications": reps,
    }))
}

/// Writes every output file into `dir` and returns their paths.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, o: &Outcome, wall_seconds: f64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = vec![
        ("reps.csv".to_string(), reps_csv(o)?),
        ("series.csv".to_string(), series_csv(o)?),
        ("aggregate.csv".to_string(), aggregate_csv(o)?),
        ("summary.json".to_string(), serde_json::to_string_pretty(&summary_json(cfg, o))? + "\n"),
        ("manifest.json".to_string(), serde_json::to_string_pretty(&manifest_json(cfg, o, wall_seconds)?)? + "\n"),
        ("config.toml".to_string(), to_toml(&rerun_config(cfg, o))),
    ];
    files.extend(o.artifacts.iter().cloned());
    let mut out = Vec::with_capacity(files.len());
    for (name, text) in files {
        let p = dir.join(name);
        std::fs::write(&p, text)?;
        out.push(p);
    }
    Ok(out)
}
