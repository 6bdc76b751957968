use std::path::Path;
use std::process::{Command, Output};

const SMALL_SSB: &str = r#"
experiment = "lqg-ssb"
seed = 11
reps = 3

[model]
steps = 10
tau = 0.5

[sampler]
particles = 100
max_iters = 5
"#;

fn sbs(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sbs"));
    cmd.args(args).env_remove("SBS_OUT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn lists_every_experiment() {
    let out = sbs(&["list-experiments"], &[]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for id in ["lqg-two-marginal", "lqg-ssb", "lqg-highdim", "ot-brownian", "flow-transport", "pf-compare", "logistic"] {
        assert!(text.lines().any(|l| l.starts_with(id)), "{id} missing from\n{text}");
    }
}

#[test]
fn validate_prints_resolved_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "experiment = \"lqg-ssb\"\n");
    let out = sbs(&["validate", &cfg], &[]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for line in ["d = 2", "steps = 40", "tau = 2.0", "particles = 1000"] {
        assert!(text.lines().any(|l| l == line), "{line} missing from\n{text}");
    }
}

#[test]
fn schema_errors_name_the_field_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "experiment = \"lqg-ssb\"\n[sampler]\nparticles = -3\n");
    let out = sbs(&["validate", &bad], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("sampler.particles"));

    let logistic = write(dir.path(), "l.toml", "experiment = \"logistic\"\n");
    let out = sbs(&["validate", &logistic], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("model.dataset"));

    let unknown = write(dir.path(), "u.toml", "experiment = \"nope\"\n");
    let out = sbs(&["run", &unknown], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("unknown-experiment"));
}

#[test]
fn runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_SSB);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(sbs(&["run", &cfg, "--out", a.to_str().unwrap(), "--threads", "1"], &[]).status.success());
    assert!(sbs(&["run", &cfg, "--out", b.to_str().unwrap(), "--threads", "3"], &[]).status.success());
    for f in ["reps.csv", "series.csv", "aggregate.csv", "summary.json", "policies.txt"] {
        assert_eq!(read(&a, f), read(&b, f), "{f} differs");
    }
    let reps = read(&a, "reps.csv");
    assert!(reps.starts_with("rep,log_z_ssb,log_z_smc"));
    assert_eq!(reps.lines().count(), 4);
}

#[test]
fn seed_and_reps_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_SSB);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(sbs(&["run", &cfg, "--out", a.to_str().unwrap(), "--reps", "1"], &[]).status.success());
    assert!(sbs(&["run", &cfg, "--out", b.to_str().unwrap(), "--reps", "1", "--seed", "12"], &[]).status.success());
    assert_eq!(read(&a, "reps.csv").lines().count(), 2);
    assert_ne!(read(&a, "reps.csv"), read(&b, "reps.csv"));
}

#[test]
fn manifest_and_rerun_config_reproduce_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_SSB);
    let a = dir.path().join("a");
    assert!(sbs(&["run", &cfg, "--out", a.to_str().unwrap()], &[]).status.success());
    let manifest: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["sampler"]["particles"], 100);
    assert!(manifest["git_describe"].as_str().is_some_and(|s| !s.is_empty()));
    assert!(manifest["wall_seconds"].as_f64().unwrap() >= 0.0);

    let b = dir.path().join("b");
    let rerun = a.join("config.toml");
    assert!(sbs(&["run", rerun.to_str().unwrap(), "--out", b.to_str().unwrap()], &[]).status.success());
    assert_eq!(read(&a, "reps.csv"), read(&b, "reps.csv"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &SMALL_SSB.replace("reps = 3", "reps = 1"));
    let env_out = dir.path().join("from-env");
    let out = sbs(&["run", &cfg], &[("SBS_OUT", &env_out)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env_out.join("reps.csv").is_file());
}

#[test]
fn highdim_run_writes_diagonal_policies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "h.toml",
        "experiment = \"lqg-highdim\"\nreps = 1\n[model]\nd = 8\nsteps = 6\ntau = 0.3\n[sampler]\nparticles = 200\nmax_iters = 3\nbaseline = \"matched-n\"\n",
    );
    let a = dir.path().join("a");
    assert!(sbs(&["run", &cfg, "--out", a.to_str().unwrap()], &[]).status.success());
    let text = read(&a, "policies.txt");
    let p = sbs::policy_io::read_policies(&text).unwrap();
    assert_eq!(p.steps(), 6);
    for q in &p.policies {
        assert_eq!(q.params().len(), 2 * 8 + 1);
    }
    let summary: serde_json::Value = serde_json::from_str(&read(&a, "summary.json")).unwrap();
    assert_eq!(summary["summary"]["policy_params_per_time"], 17.0);
}
