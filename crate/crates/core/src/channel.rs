//! Small-scale fading and MMSE channel estimation.
//!
//! Pilots are mutually orthogonal (`tau_p = f * K >= K`), so after
//! de-spreading device `k` observes only its own channel plus white noise of
//! variance `sigma^2 / (tau_p * p)` per antenna. The estimator works directly
//! on that observation; pilot matrices are never built.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scenario::{Deployment, SystemConfig};

pub type C64 = Complex<f64>;

/// Draws one circularly-symmetric complex Gaussian sample of the given
/// variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * scale, im * scale)
}

/// Fills an `M x K` matrix whose column `k` has i.i.d. `CN(0, var[k])`
/// entries. Samples are drawn device by device, antenna by antenna.
fn gaussian_columns<R: Rng + ?Sized>(rng: &mut R, antennas: usize, var: &[f64]) -> DMatrix<C64> {
    let mut data = Vec::with_capacity(antennas * var.len());
    for &v in var {
        data.extend((0..antennas).map(|_| complex_normal(rng, v)));
    }
    DMatrix::from_vec(antennas, var.len(), data)
}

/// True channels for every realization of one deployment.
#[derive(Debug, Clone)]
pub struct ChannelBatch {
    /// One `M x K` matrix per realization; column `k` is `h_k`.
    pub realizations: Vec<DMatrix<C64>>,
    pub beta: Vec<f64>,
}

impl ChannelBatch {
    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    pub fn devices(&self) -> usize {
        self.beta.len()
    }

    pub fn antennas(&self) -> usize {
        self.realizations.first().map_or(0, |h| h.nrows())
    }
}

/// Per-device estimate and error variances.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationModel {
    /// Variance of each element of the estimate.
    pub phi: Vec<f64>,
    /// Variance of each element of the estimation error.
    pub error_var: Vec<f64>,
    pub pilot_length: usize,
    /// Effective pilot noise variance `sigma^2 / (tau_p * p)`.
    pub pilot_noise: f64,
}

impl EstimationModel {
    pub fn new(
        beta: &[f64],
        noise_power: f64,
        pilot_length: usize,
        pilot_power: f64,
    ) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument("no devices".into()));
        }
        if pilot_length < beta.len() {
            return Err(Error::InvalidArgument(format!(
                "pilot length {pilot_length} cannot give {} devices orthogonal pilots",
                beta.len()
            )));
        }
        if pilot_power.is_nan() || pilot_power <= 0.0 || noise_power.is_nan() || noise_power < 0.0 {
            return Err(Error::InvalidArgument(
                "pilot power must be positive and noise non-negative".into(),
            ));
        }
        check_gains(beta)?;
        let pilot_noise = noise_power / (pilot_length as f64 * pilot_power);
        let phi: Vec<f64> = beta.iter().map(|&b| b * b / (b + pilot_noise)).collect();
        let error_var = beta.iter().zip(&phi).map(|(&b, &p)| b - p).collect();
        Ok(Self {
            phi,
            error_var,
            pilot_length,
            pilot_noise,
        })
    }

    /// Estimate scaling `beta_k / (beta_k + sigma^2 / (tau_p p))`.
    pub fn gain(&self, k: usize) -> f64 {
        let beta = self.phi[k] + self.error_var[k];
        beta / (beta + self.pilot_noise)
    }

    /// `sum_i c_i`, the scalar of the summed error covariances.
    pub fn total_error_var(&self) -> f64 {
        self.error_var.iter().sum()
    }
}

fn check_gains(beta: &[f64]) -> Result<()> {
    match beta.iter().position(|&b| !(b.is_finite() && b > 0.0)) {
        Some(k) => Err(Error::InvalidArgument(format!(
            "large-scale gain of device {k} is {}; must be positive",
            beta[k]
        ))),
        None => Ok(()),
    }
}

/// Draws `n_channel` i.i.d. Rayleigh realizations for a deployment.
pub fn draw_channels<R: Rng + ?Sized>(
    dep: &Deployment,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelBatch> {
    draw_channels_with(&dep.beta, cfg.antennas, cfg.channel_count(), rng)
}

pub fn draw_channels_with<R: Rng + ?Sized>(
    beta: &[f64],
    antennas: usize,
    count: usize,
    rng: &mut R,
) -> Result<ChannelBatch> {
    check_gains(beta)?;
    let realizations = (0..count)
        .map(|_| gaussian_columns(rng, antennas, beta))
        .collect();
    Ok(ChannelBatch {
        realizations,
        beta: beta.to_vec(),
    })
}

pub fn estimation_model(dep: &Deployment, cfg: &SystemConfig) -> Result<EstimationModel> {
    EstimationModel::new(
        &dep.beta,
        cfg.noise_power(),
        cfg.pilot_length(),
        cfg.pilot_power_w,
    )
}

/// MMSE estimates for a batch.
#[derive(Debug, Clone)]
pub struct EstimateBatch {
    pub realizations: Vec<DMatrix<C64>>,
    pub model: EstimationModel,
}

impl EstimateBatch {
    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }
}

/// Forms `h_hat_k = gain_k * (h_k + e_k)` with `e_k ~ CN(0, sigma^2/(tau_p p) I)`.
pub fn estimate_channels<R: Rng + ?Sized>(
    batch: &ChannelBatch,
    model: &EstimationModel,
    rng: &mut R,
) -> Result<EstimateBatch> {
    let k = batch.devices();
    if model.phi.len() != k {
        return Err(Error::InvalidArgument(format!(
            "estimation model has {} devices, batch has {k}",
            model.phi.len()
        )));
    }
    let noise = vec![model.pilot_noise; k];
    let gains: Vec<f64> = (0..k).map(|i| model.gain(i)).collect();
    let realizations = batch
        .realizations
        .iter()
        .map(|h| {
            let mut est = h + gaussian_columns(rng, h.nrows(), &noise);
            for (mut col, &g) in est.column_iter_mut().zip(&gains) {
                col *= C64::from(g);
            }
            est
        })
        .collect();
    Ok(EstimateBatch {
        realizations,
        model: model.clone(),
    })
}
