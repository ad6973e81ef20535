use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use urllc_mimo::harness::{emit_results, run_sweep, Manifest, SweepSpec};
use urllc_mimo::power::Strategy;
use urllc_mimo::precoding::Precoder;
use urllc_mimo::scenario::SystemConfig;
use urllc_mimo::{validate, Error, Result};

#[derive(Parser)]
#[command(
    name = "urllc-sim",
    version,
    about = "Massive MIMO downlink URLLC Monte-Carlo simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the single (K, f) cell of a configuration.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "mr,mmse")]
        precoder: Vec<Precoder>,
        #[arg(long, value_delimiter = ',', default_value = "equal,maxmin,maxprod")]
        strategy: Vec<Strategy>,
    },
    /// Sweep device counts, pilot lengths, precoders and strategies.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Device counts, e.g. `2..10` or `2,4,8`.
        #[arg(long = "k", value_parser = parse_counts)]
        k_values: Option<Counts>,
        /// Pilots per device, e.g. `1,2`.
        #[arg(long = "f", value_parser = parse_counts)]
        f_values: Option<Counts>,
        #[arg(long, value_delimiter = ',', default_value = "mr,mmse")]
        precoder: Vec<Precoder>,
        #[arg(long, value_delimiter = ',', default_value = "equal,maxmin,maxprod")]
        strategy: Vec<Strategy>,
    },
    /// Re-run the sweep recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Run the built-in oracle checks.
    Validate {
        #[arg(long, default_value_t = 2020)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deployments: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl RunArgs {
    fn config(&self) -> Result<SystemConfig> {
        let mut cfg = match &self.config {
            Some(path) => SystemConfig::from_path(path)?,
            None => SystemConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = self.deployments {
            cfg.n_deployments = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
struct Counts(Vec<usize>);

fn parse_counts(text: &str) -> std::result::Result<Counts, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|e| format!("`{part}`: {e}"))?;
            let b: usize = b.trim().parse().map_err(|e| format!("`{part}`: {e}"))?;
            if a > b {
                return Err(format!("empty range `{part}`"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|e| format!("`{part}`: {e}"))?);
        }
    }
    if out.is_empty() {
        return Err("no values".into());
    }
    Ok(Counts(out))
}

fn execute(spec: &SweepSpec, workers: usize, out: &Path) -> Result<bool> {
    let started = Instant::now();
    let outcome = run_sweep(spec, workers)?;
    let mut manifest = Manifest::new(spec);
    for failure in &outcome.failures {
        eprintln!("cell {:?} failed: {}", failure.key, failure.error);
        manifest
            .failures
            .push(format!("{:?}: {}", failure.key, failure.error));
    }
    for r in &outcome.reports {
        if r.unconverged > 0 {
            eprintln!(
                "cell {:?}: max-product missed its tolerance in {} deployments",
                r.key, r.unconverged
            );
        }
    }
    let files = emit_results(&outcome.reports, &manifest, out)?;
    eprintln!(
        "{} cells in {:.1} s",
        outcome.reports.len(),
        started.elapsed().as_secs_f64()
    );
    for f in files {
        println!("{}", f.display());
    }
    Ok(outcome.failures.is_empty())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            run,
            precoder,
            strategy,
        } => {
            let cfg = run.config()?;
            let spec = SweepSpec {
                k_values: vec![cfg.devices],
                f_values: vec![cfg.pilots_per_device],
                precoders: precoder,
                strategies: strategy,
                base: cfg,
            };
            execute(&spec, run.workers, &run.out)
        }
        Command::Sweep {
            run,
            k_values,
            f_values,
            precoder,
            strategy,
        } => {
            let cfg = run.config()?;
            let spec = SweepSpec {
                k_values: k_values.map_or_else(|| vec![cfg.devices], |c| c.0),
                f_values: f_values.map_or_else(|| vec![cfg.pilots_per_device], |c| c.0),
                precoders: precoder,
                strategies: strategy,
                base: cfg,
            };
            execute(&spec, run.workers, &run.out)
        }
        Command::Replay {
            manifest,
            out,
            workers,
        } => {
            let manifest = Manifest::from_path(&manifest)?;
            execute(&manifest.sweep, workers, &out)
        }
        Command::Validate { seed } => {
            let mut ok = true;
            for check in validate::run_all(seed) {
                println!(
                    "[{}] {}: {}",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
                ok &= check.passed;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}

fn report(e: &Error) {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}
