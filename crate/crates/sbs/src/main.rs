use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use sbs::config::{parse_config, to_toml, validate, ExperimentId};
use sbs::experiments::run_experiment;
use sbs::output::{output_dir, write_outputs, OUT_ENV};
use sbs::Error;

#[derive(Parser)]
#[command(name = "sbs", version, about = "Schrödinger bridge samplers: experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        config: PathBuf,
        /// Master seed (overrides the file).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of replications (overrides the file).
        #[arg(long)]
        reps: Option<usize>,
        /// Output directory (overrides SBS_OUT and the file).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a configuration file and print it with all defaults resolved.
    Validate { config: PathBuf },
    /// List the available experiments.
    ListExperiments,
}

fn run(config: &Path, seed: Option<u64>, reps: Option<usize>, out: Option<PathBuf>, threads: Option<usize>) -> Result<(), Error> {
    let mut cfg = parse_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = reps {
        cfg.reps = r;
    }
    cfg.out = output_dir(out.as_deref(), std::env::var_os(OUT_ENV), &cfg);
    validate(&cfg)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        pool = pool.num_threads(k.max(1));
    }
    let pool = pool.build().map_err(|e| Error::schema("--threads", e.to_string()))?;
    let start = Instant::now();
    let outcome = pool.install(|| run_experiment(&cfg))?;
    let wall = start.elapsed().as_secs_f64();
    let files = pool.install(|| write_outputs(&cfg.out, &cfg, &outcome, wall))?;
    println!("{} ({} reps, seed {}) finished in {:.1}s", cfg.experiment, cfg.reps, cfg.seed, wall);
    for (k, v) in &outcome.summary {
        println!("  {k} = {v}");
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, reps, out, threads } => run(&config, seed, reps, out, threads),
        Command::Validate { config } => parse_config(&config).map(|c| print!("{}", to_toml(&c))),
        Command::ListExperiments => {
            for e in ExperimentId::ALL {
                println!("{:<18} {}", e.name(), e.description());
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            match e {
                Error::Schema { .. } | Error::UnknownExperiment(_) | Error::FileNotFound(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
