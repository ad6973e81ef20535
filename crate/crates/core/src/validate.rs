//! Self-checks run by `urllc-sim validate`.
//!
//! Each check compares the simulator against something computed another
//! way: closed-form Rayleigh statistics for MR, brute-force grids for the
//! power-allocation solvers, and hand arithmetic for the outage thresholds.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::channel::{draw_channels_with, estimate_channels, EstimationModel};
use crate::power::{equal_power, maxmin_allocation, maxprod_allocation};
use crate::precoding::{mmse_directions_full, mmse_directions_woodbury, mr_precoder};
use crate::scenario::{db_to_linear, SystemConfig};
use crate::sinr::{estimate_coefficients, RateModel, SinrCoefficients};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

/// A random but physically shaped coefficient instance with unit noise.
///
/// Device gains span three decades and the hardening loss
/// `G_kk - a_k` is a fraction of the interference scale, so instances range
/// from noise- to interference-limited.
pub fn random_coefficients<R: Rng + ?Sized>(rng: &mut R, devices: usize) -> SinrCoefficients {
    let scale: Vec<f64> = (0..devices)
        .map(|_| 10f64.powf(rng.random_range(-2.0..1.0)))
        .collect();
    let signal: Vec<f64> = scale
        .iter()
        .map(|b| b * rng.random_range(5.0..100.0))
        .collect();
    let g = DMatrix::from_fn(devices, devices, |k, i| {
        if k == i {
            signal[k] + scale[k] * rng.random_range(0.1..1.5)
        } else {
            scale[k] * rng.random_range(0.05..1.2)
        }
    });
    SinrCoefficients::new(signal, g, 1.0).expect("generated coefficients are valid")
}

/// `(Gamma(M + 1/2) / Gamma(M))^2`, the squared mean norm of a `CN(0, I_M)`
/// vector.
pub fn mean_norm_squared(antennas: usize) -> f64 {
    let m = antennas as f64;
    (2.0 * (ln_gamma(m + 0.5) - ln_gamma(m))).exp()
}

/// Best value of `objective(rho_1, Pmax - rho_1)` over `points` evenly
/// spaced `rho_1` in `[0, Pmax]`.
pub fn grid_search_two(
    coeffs: &SinrCoefficients,
    max_power: f64,
    points: usize,
    objective: impl Fn(&[f64]) -> f64,
) -> f64 {
    (0..points)
        .map(|i| {
            let r = max_power * i as f64 / (points - 1) as f64;
            objective(&coeffs.sinr(&[r, max_power - r]))
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn log_product(v: &[f64]) -> f64 {
    v.iter().map(|g| g.ln()).sum()
}

pub fn check_thresholds() -> Check {
    let cfg = SystemConfig::default();
    let rm = RateModel::from_config(&cfg).expect("default config is valid");
    let rt = rm.rate_threshold();
    let gth = rm.sinr_threshold();
    let passed = (rt - 284_444.444_4).abs() / 284_444.4 < 1e-6 && (gth - 0.011_013_6).abs() < 1e-6;
    Check::new(
        "outage thresholds",
        passed,
        format!("R_T = {rt:.1} bit/s, gamma_th = {gth:.7}"),
    )
}

/// Monte-Carlo MR coefficients against their closed forms.
pub fn check_mr_closed_form(realizations: usize, seed: u64) -> Check {
    let cfg = SystemConfig::default();
    let antennas = 100;
    let beta: Vec<f64> = [-110.0, -120.0, -128.0, -135.0].map(db_to_linear).to_vec();
    let noise = cfg.noise_power();
    let model =
        EstimationModel::new(&beta, noise, beta.len(), cfg.pilot_power_w).expect("valid model");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels =
        draw_channels_with(&beta, antennas, realizations, &mut rng).expect("positive gains");
    let estimates = estimate_channels(&channels, &model, &mut rng).expect("matching model");
    let w = mr_precoder(&estimates).expect("non-zero estimates");
    let c = estimate_coefficients(&channels, &w, noise).expect("valid coefficients");

    let gamma_ratio = mean_norm_squared(antennas);
    let mut worst: f64 = 0.0;
    for k in 0..beta.len() {
        let phi = model.phi[k];
        worst = worst.max((c.signal[k] / (phi * gamma_ratio) - 1.0).abs());
        for i in 0..beta.len() {
            let expected = if i == k {
                phi * antennas as f64 + beta[k] - phi
            } else {
                beta[k]
            };
            worst = worst.max((c.second_moment[(k, i)] / expected - 1.0).abs());
        }
    }
    Check::new(
        "MR coefficients vs closed form",
        worst <= 0.01,
        format!("worst relative error {worst:.2e} over {realizations} realizations"),
    )
}

pub fn check_maxmin(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_spread: f64 = 0.0;
    let mut worst_grid: f64 = 0.0;
    let mut worst_budget: f64 = 0.0;
    for n in 0..instances {
        let k = if n % 2 == 0 {
            2
        } else {
            rng.random_range(1..=10)
        };
        let c = random_coefficients(&mut rng, k);
        let pmax = 10f64.powf(rng.random_range(-1.0..1.0));
        let Ok(r) = maxmin_allocation(&c, pmax) else {
            return Check::new("max-min solver", false, format!("instance {n} failed"));
        };
        let gamma = c.sinr(&r.rho);
        let lo = min(&gamma);
        worst_spread = worst_spread.max(gamma.iter().map(|g| (g - lo) / lo).fold(0.0, f64::max));
        worst_budget = worst_budget.max((r.rho.iter().sum::<f64>() / pmax - 1.0).abs());
        if k == 2 {
            let grid = grid_search_two(&c, pmax, 10_000, min);
            worst_grid = worst_grid.max((lo - grid).abs() / grid);
        }
    }
    Check::new(
        "max-min solver",
        worst_spread <= 1e-6 && worst_budget <= 1e-6 && worst_grid <= 1e-3,
        format!("SINR spread {worst_spread:.1e}, budget error {worst_budget:.1e}, grid gap {worst_grid:.1e}"),
    )
}

pub fn check_maxprod(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_grid: f64 = 0.0;
    let mut dominated = 0;
    for n in 0..instances {
        let k = if n % 2 == 0 {
            2
        } else {
            rng.random_range(1..=10)
        };
        let c = random_coefficients(&mut rng, k);
        let pmax = 10f64.powf(rng.random_range(-1.0..1.0));
        let best = maxprod_allocation(&c, pmax).expect("valid instance");
        let value = log_product(&c.sinr(&best.rho));
        let eq = log_product(&c.sinr(&equal_power(k, pmax).expect("k >= 1").rho));
        let mm = log_product(&c.sinr(&maxmin_allocation(&c, pmax).expect("valid instance").rho));
        // 1e-6 relative on the product is 1e-6 absolute on its logarithm.
        if value < eq.max(mm) - 1e-6 {
            dominated += 1;
        }
        if k == 2 {
            let grid = grid_search_two(&c, pmax, 10_000, log_product);
            worst_grid = worst_grid.max((value - grid).exp_m1().abs());
        }
    }
    Check::new(
        "max-product solver",
        dominated == 0 && worst_grid <= 1e-3,
        format!("{dominated} instances beaten by equal/max-min, grid gap {worst_grid:.1e}"),
    )
}

pub fn check_mmse_solves(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = vec![1e-12; 10];
    let channels = draw_channels_with(&beta, 100, 20, &mut rng).expect("positive gains");
    let worst = channels
        .realizations
        .iter()
        .map(|h| {
            let full = mmse_directions_full(h, 3e-13).expect("positive definite");
            let push = mmse_directions_woodbury(h, 3e-13).expect("positive definite");
            (&push - &full).norm() / full.norm()
        })
        .fold(0.0, f64::max);
    Check::new(
        "MMSE push-through solve",
        worst <= 1e-8,
        format!("worst relative difference {worst:.1e}"),
    )
}

/// Runs every check.
pub fn run_all(seed: u64) -> Vec<Check> {
    vec![
        check_thresholds(),
        check_mr_closed_form(100_000, seed),
        check_maxmin(100, seed ^ 1),
        check_maxprod(100, seed ^ 2),
        check_mmse_solves(seed ^ 3),
    ]
}
