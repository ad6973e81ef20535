//! Monte-Carlo driver.
//!
//! A sweep is the Cartesian product of device counts `K`, pilots per device
//! `f`, precoders and power-allocation strategies. Deployment `i` of the
//! `(K, f)` cell is driven by its own RNG seeded from
//! `(master seed, K, f, i)`; precoder and strategy do not enter the seed, so
//! every precoder/strategy pair of a cell sees the same devices and channels
//! and comparisons between them are paired.
//!
//! Deployments run in parallel; results are collected by deployment index
//! and reduced in that order, so the output does not depend on the worker
//! count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_channels, estimate_channels, estimation_model};
use crate::error::{Error, Result};
use crate::power::{allocate, Certificate, Strategy};
use crate::precoding::Precoder;
use crate::scenario::{generate_deployment, linear_to_db, SystemConfig};
use crate::sinr::{coefficients_for, RateModel};
use crate::stats::{mean_interval, wilson_interval, Interval};

/// Width of the SINR histogram bins, dB.
pub const SINR_BIN_DB: f64 = 0.5;
/// Per-cell cap on stored SINR samples.
pub const SINR_RESERVOIR: usize = 1 << 20;

/// Axes of a sweep plus the configuration shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(rename = "K_values")]
    pub k_values: Vec<usize>,
    pub f_values: Vec<usize>,
    pub precoders: Vec<Precoder>,
    pub strategies: Vec<Strategy>,
    pub base: SystemConfig,
}

impl SweepSpec {
    /// A sweep over the single cell described by `cfg`.
    pub fn single(cfg: &SystemConfig, precoder: Precoder, strategy: Strategy) -> Self {
        Self {
            k_values: vec![cfg.devices],
            f_values: vec![cfg.pilots_per_device],
            precoders: vec![precoder],
            strategies: vec![strategy],
            base: cfg.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty()
            || self.f_values.is_empty()
            || self.precoders.is_empty()
            || self.strategies.is_empty()
        {
            return Err(Error::InvalidConfig(
                "every sweep axis needs a value".into(),
            ));
        }
        for &k in &self.k_values {
            for &f in &self.f_values {
                self.base.with_devices(k, f).validate()?;
            }
        }
        Ok(())
    }
}

/// Coordinates of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    #[serde(rename = "K")]
    pub devices: usize,
    #[serde(rename = "f")]
    pub pilots_per_device: usize,
    pub precoder: Precoder,
    pub strategy: Strategy,
}

/// What one deployment contributed to a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentMetrics {
    pub sum_se: f64,
    pub min_sinr: f64,
    pub devices_in_outage: usize,
    /// Post-allocation SINR of every device, dB.
    pub sinr_db: Vec<f64>,
    pub deployment_fingerprint: u64,
    /// Max-product did not reach its gradient tolerance.
    pub solver_unconverged: bool,
}

/// Aggregated statistics of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageReport {
    pub key: CellKey,
    pub n_deployments: usize,
    pub sinr_threshold: f64,
    /// Fraction of (deployment, device) pairs in outage.
    pub device_outage: Interval,
    /// Fraction of deployments whose weakest device is in outage.
    pub system_outage: Interval,
    /// Mean sum SE over deployments, bit/s/Hz.
    pub sum_se: Interval,
    /// Per-device SINR samples in dB (reservoir-sampled beyond
    /// [`SINR_RESERVOIR`]).
    pub sinr_samples_db: Vec<f64>,
    pub unconverged: usize,
    /// Metrics in deployment order, kept for paired comparisons.
    pub per_deployment: Vec<DeploymentMetrics>,
}

/// A cell that could not be completed.
#[derive(Debug)]
pub struct CellFailure {
    pub key: CellKey,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub reports: Vec<OutageReport>,
    pub failures: Vec<CellFailure>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of deployment `index` in the `(K, f)` cell.
pub fn derive_seed(master: u64, devices: usize, pilots_per_device: usize, index: u64) -> u64 {
    [devices as u64, pilots_per_device as u64, index]
        .into_iter()
        .fold(splitmix64(master), |acc, v| splitmix64(acc ^ v))
}

/// Runs one deployment through every requested precoder and strategy.
///
/// The result is indexed `[precoder][strategy]`; a failure only affects the
/// entries it belongs to.
pub fn simulate_deployment(
    cfg: &SystemConfig,
    index: usize,
    precoders: &[Precoder],
    strategies: &[Strategy],
) -> Vec<Vec<Result<DeploymentMetrics>>> {
    let wrap = |e: Error| Error::Deployment {
        index,
        k: cfg.devices,
        f: cfg.pilots_per_device,
        source: Box::new(e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        cfg.devices,
        cfg.pilots_per_device,
        index as u64,
    ));
    let shared = (|| -> Result<_> {
        let dep = generate_deployment(cfg, &mut rng);
        let channels = draw_channels(&dep, cfg, &mut rng)?;
        let model = estimation_model(&dep, cfg)?;
        let estimates = estimate_channels(&channels, &model, &mut rng)?;
        let rates = RateModel::from_config(cfg)?;
        Ok((dep.fingerprint(), channels, estimates, rates))
    })();
    let (fingerprint, channels, estimates, rates) = match shared {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            return precoders
                .iter()
                .map(|_| {
                    strategies
                        .iter()
                        .map(|_| Err(wrap(Error::Simulation(msg.clone()))))
                        .collect()
                })
                .collect();
        }
    };
    let noise = cfg.noise_power();
    let threshold = rates.sinr_threshold();

    precoders
        .iter()
        .map(|&scheme| {
            let coeffs = coefficients_for(&channels, &estimates, scheme, noise, cfg.pilot_power_w);
            strategies
                .iter()
                .map(|&strategy| {
                    let coeffs = coeffs
                        .as_ref()
                        .map_err(|e| wrap(Error::Simulation(e.to_string())))?;
                    let alloc = allocate(strategy, coeffs, cfg.max_power_w).map_err(wrap)?;
                    let gamma = coeffs.sinr(&alloc.rho);
                    Ok(DeploymentMetrics {
                        sum_se: gamma.iter().map(|&g| rates.spectral_efficiency(g)).sum(),
                        min_sinr: gamma.iter().copied().fold(f64::INFINITY, f64::min),
                        devices_in_outage: gamma.iter().filter(|&&g| g < threshold).count(),
                        sinr_db: gamma.iter().map(|&g| linear_to_db(g)).collect(),
                        deployment_fingerprint: fingerprint,
                        solver_unconverged: matches!(
                            alloc.certificate,
                            Certificate::MaxProd {
                                converged: false,
                                ..
                            }
                        ),
                    })
                })
                .collect()
        })
        .collect()
}

fn aggregate(
    key: CellKey,
    cfg: &SystemConfig,
    metrics: Vec<DeploymentMetrics>,
) -> Result<OutageReport> {
    let threshold = RateModel::from_config(cfg)?.sinr_threshold();
    let n = metrics.len();
    let device_trials = (n * cfg.devices) as u64;
    let device_hits: usize = metrics.iter().map(|m| m.devices_in_outage).sum();
    let system_hits = metrics.iter().filter(|m| m.min_sinr < threshold).count();
    let sum_se: Vec<f64> = metrics.iter().map(|m| m.sum_se).collect();

    let mut reservoir = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        cfg.devices,
        cfg.pilots_per_device,
        u64::MAX,
    ));
    for (seen, sample) in metrics.iter().flat_map(|m| &m.sinr_db).enumerate() {
        if reservoir.len() < SINR_RESERVOIR {
            reservoir.push(*sample);
        } else {
            let j = rng.random_range(0..=seen);
            if j < SINR_RESERVOIR {
                reservoir[j] = *sample;
            }
        }
    }

    Ok(OutageReport {
        key,
        n_deployments: n,
        sinr_threshold: threshold,
        device_outage: wilson_interval(device_hits as u64, device_trials),
        system_outage: wilson_interval(system_hits as u64, n as u64),
        sum_se: mean_interval(&sum_se),
        sinr_samples_db: reservoir,
        unconverged: metrics.iter().filter(|m| m.solver_unconverged).count(),
        per_deployment: metrics,
    })
}

fn run_in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(job))
}

/// Runs every precoder/strategy combination of one `(K, f)` cell over shared
/// deployments.
fn run_group(
    cfg: &SystemConfig,
    precoders: &[Precoder],
    strategies: &[Strategy],
    outcome: &mut SweepOutcome,
) {
    let per_deployment: Vec<_> = (0..cfg.n_deployments)
        .into_par_iter()
        .map(|i| simulate_deployment(cfg, i, precoders, strategies))
        .collect();

    for (p, &precoder) in precoders.iter().enumerate() {
        for (s, &strategy) in strategies.iter().enumerate() {
            let key = CellKey {
                devices: cfg.devices,
                pilots_per_device: cfg.pilots_per_device,
                precoder,
                strategy,
            };
            let metrics: Result<Vec<_>> = per_deployment
                .iter()
                .map(|d| match &d[p][s] {
                    Ok(m) => Ok(m.clone()),
                    Err(e) => Err(Error::Simulation(e.to_string())),
                })
                .collect();
            match metrics.and_then(|m| aggregate(key, cfg, m)) {
                Ok(report) => outcome.reports.push(report),
                Err(error) => outcome.failures.push(CellFailure { key, error }),
            }
        }
    }
}

/// Runs a sweep on `workers` threads (`0` uses the global rayon pool).
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepOutcome> {
    spec.validate()?;
    run_in_pool(workers, || {
        let mut outcome = SweepOutcome::default();
        for &k in &spec.k_values {
            for &f in &spec.f_values {
                let cfg = spec.base.with_devices(k, f);
                run_group(&cfg, &spec.precoders, &spec.strategies, &mut outcome);
            }
        }
        outcome
    })
}

/// Runs a single cell.
pub fn run_cell(
    cfg: &SystemConfig,
    precoder: Precoder,
    strategy: Strategy,
    workers: usize,
) -> Result<OutageReport> {
    let mut outcome = run_sweep(&SweepSpec::single(cfg, precoder, strategy), workers)?;
    match outcome.failures.pop() {
        Some(failure) => Err(failure.error),
        None => Ok(outcome.reports.remove(0)),
    }
}

/// Mean and 95% interval of the per-deployment difference `a - b`.
///
/// Fails unless both reports observed the same deployments.
pub fn paired_difference(
    a: &OutageReport,
    b: &OutageReport,
    metric: impl Fn(&DeploymentMetrics) -> f64,
) -> Result<Interval> {
    let same = a.per_deployment.len() == b.per_deployment.len()
        && a.per_deployment
            .iter()
            .zip(&b.per_deployment)
            .all(|(x, y)| x.deployment_fingerprint == y.deployment_fingerprint);
    if !same {
        return Err(Error::InvalidArgument(format!(
            "{:?} and {:?} are not paired",
            a.key, b.key
        )));
    }
    let diffs: Vec<f64> = a
        .per_deployment
        .iter()
        .zip(&b.per_deployment)
        .map(|(x, y)| metric(x) - metric(y))
        .collect();
    Ok(mean_interval(&diffs))
}

/// Histogram of SINR samples with [`SINR_BIN_DB`] bins aligned to multiples
/// of the bin width. Returns `(lo, hi, count)` rows covering the sample range.
pub fn sinr_histogram(samples_db: &[f64]) -> Vec<(f64, f64, u64)> {
    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    for &s in samples_db {
        let bin = if s.is_finite() {
            (s / SINR_BIN_DB).floor() as i64
        } else if s > 0.0 {
            i64::MAX / 2
        } else {
            i64::MIN / 2
        };
        *counts.entry(bin).or_default() += 1;
    }
    let (Some(&first), Some(&last)) = (counts.keys().next(), counts.keys().next_back()) else {
        return Vec::new();
    };
    (first..=last)
        .map(|b| {
            let lo = b as f64 * SINR_BIN_DB;
            (lo, lo + SINR_BIN_DB, counts.get(&b).copied().unwrap_or(0))
        })
        .collect()
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub master_seed: u64,
    pub sweep: SweepSpec,
    #[serde(default)]
    pub failures: Vec<String>,
}

impl Manifest {
    pub fn new(spec: &SweepSpec) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            master_seed: spec.base.seed,
            sweep: spec.clone(),
            failures: Vec::new(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut manifest: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        manifest.sweep.base.seed = manifest.master_seed;
        manifest.sweep.validate()?;
        Ok(manifest)
    }
}

fn key_fields(key: &CellKey) -> [String; 4] {
    [
        key.devices.to_string(),
        key.pilots_per_device.to_string(),
        key.precoder.to_string(),
        key.strategy.to_string(),
    ]
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Writes `sum_se.csv`, `outage.csv`, `sinr_pdf.csv` and `manifest.json`
/// into `out_dir` and returns their paths. Rows are sorted by cell key.
pub fn emit_results(
    reports: &[OutageReport],
    manifest: &Manifest,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let mut sorted: Vec<&OutageReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.key);

    let sum_se = out_dir.join("sum_se.csv");
    write_csv(
        &sum_se,
        &[
            "K",
            "f",
            "precoder",
            "strategy",
            "sum_se_mean",
            "sum_se_ci_lo",
            "sum_se_ci_hi",
        ],
        sorted.iter().map(|r| {
            let mut row = key_fields(&r.key).to_vec();
            row.extend([r.sum_se.estimate, r.sum_se.lo, r.sum_se.hi].map(|v| v.to_string()));
            row
        }),
    )?;

    let outage = out_dir.join("outage.csv");
    write_csv(
        &outage,
        &[
            "K",
            "f",
            "precoder",
            "strategy",
            "device_outage",
            "device_ci_lo",
            "device_ci_hi",
            "system_outage",
            "system_ci_lo",
            "system_ci_hi",
            "n_deployments",
        ],
        sorted.iter().map(|r| {
            let mut row = key_fields(&r.key).to_vec();
            let (d, s) = (r.device_outage, r.system_outage);
            row.extend([d.estimate, d.lo, d.hi, s.estimate, s.lo, s.hi].map(|v| v.to_string()));
            row.push(r.n_deployments.to_string());
            row
        }),
    )?;

    let pdf = out_dir.join("sinr_pdf.csv");
    write_csv(
        &pdf,
        &[
            "K",
            "f",
            "precoder",
            "strategy",
            "bin_lo_db",
            "bin_hi_db",
            "count",
        ],
        sorted.iter().flat_map(|r| {
            let key = key_fields(&r.key);
            sinr_histogram(&r.sinr_samples_db)
                .into_iter()
                .map(move |(lo, hi, count)| {
                    let mut row = key.to_vec();
                    row.extend([lo.to_string(), hi.to_string(), count.to_string()]);
                    row
                })
        }),
    )?;

    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(|source| Error::Io {
        path: manifest_path.clone(),
        source,
    })?;
    Ok(vec![sum_se, outage, pdf, manifest_path])
}
