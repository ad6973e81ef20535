//! Hardening-bound SINR coefficients, spectral efficiency and outage
//! thresholds.
//!
//! The downlink SINR of device `k` is
//!
//! ```text
//! gamma_k = rho_k a_k / (sum_i rho_i G[k][i] - rho_k a_k + sigma^2)
//! a_k     = |E[w_k^H h_k]|^2
//! G[k][i] = E[|w_i^H h_k|^2]
//! ```
//!
//! where the expectations are sample means over the channel realizations of
//! one deployment. `(a, G, sigma^2)` do not depend on the powers, so they are
//! estimated once and shared by every power-allocation strategy.

use nalgebra::DMatrix;

use crate::channel::{ChannelBatch, EstimateBatch, C64};
use crate::error::{Error, Result};
use crate::precoding::{effective_gains, mmse_regularizer, Precoder, PrecoderBatch};
use crate::scenario::SystemConfig;
use crate::stats::CompensatedSum;

/// Sufficient statistics of the hardening-bound SINR.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrCoefficients {
    /// `a_k`, linear.
    pub signal: Vec<f64>,
    /// `G[(k, i)] = E[|w_i^H h_k|^2]`.
    pub second_moment: DMatrix<f64>,
    pub noise_power: f64,
}

impl SinrCoefficients {
    pub fn new(signal: Vec<f64>, second_moment: DMatrix<f64>, noise_power: f64) -> Result<Self> {
        let k = signal.len();
        if k == 0 || second_moment.shape() != (k, k) {
            return Err(Error::InvalidArgument(format!(
                "need K >= 1 signal gains and a K x K second-moment matrix, got {k} and {:?}",
                second_moment.shape()
            )));
        }
        if let Some(i) = signal.iter().position(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "signal gain of device {i} is {}; must be positive",
                signal[i]
            )));
        }
        if second_moment.iter().any(|&g| !(g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidArgument(
                "second moments must be finite and non-negative".into(),
            ));
        }
        if !(noise_power > 0.0 && noise_power.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise power must be positive, got {noise_power}"
            )));
        }
        Ok(Self {
            signal,
            second_moment,
            noise_power,
        })
    }

    pub fn devices(&self) -> usize {
        self.signal.len()
    }

    /// Interference-plus-noise seen by device `k`, excluding its coherent
    /// signal part.
    pub fn interference(&self, rho: &[f64], k: usize) -> f64 {
        let row = self.second_moment.row(k);
        let total: f64 = row.iter().zip(rho).map(|(g, r)| g * r).sum();
        // G_kk >= a_k, so the self term never goes negative in exact arithmetic.
        (total - rho[k] * self.signal[k]).max(0.0) + self.noise_power
    }

    /// Per-device SINR for the power vector `rho` (watts).
    pub fn sinr(&self, rho: &[f64]) -> Vec<f64> {
        assert_eq!(rho.len(), self.devices(), "power vector length");
        (0..self.devices())
            .map(|k| rho[k] * self.signal[k] / self.interference(rho, k))
            .collect()
    }

    /// Multiplies `a`, `G` and `sigma^2` by `factor`; every SINR is
    /// unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            signal: self.signal.iter().map(|a| a * factor).collect(),
            second_moment: &self.second_moment * factor,
            noise_power: self.noise_power * factor,
        }
    }
}

/// Running sample means of `w_k^H h_k` and `|w_i^H h_k|^2`.
#[derive(Debug, Clone)]
pub struct CoefficientAccumulator {
    devices: usize,
    count: usize,
    mean_re: Vec<CompensatedSum>,
    mean_im: Vec<CompensatedSum>,
    second: Vec<CompensatedSum>,
}

impl CoefficientAccumulator {
    pub fn new(devices: usize) -> Self {
        Self {
            devices,
            count: 0,
            mean_re: vec![CompensatedSum::default(); devices],
            mean_im: vec![CompensatedSum::default(); devices],
            second: vec![CompensatedSum::default(); devices * devices],
        }
    }

    /// Adds one realization given `gains[(i, k)] = w_i^H h_k`.
    pub fn add(&mut self, gains: &DMatrix<C64>) {
        let k = self.devices;
        assert_eq!(gains.shape(), (k, k), "effective gain matrix shape");
        for j in 0..k {
            let own = gains[(j, j)];
            self.mean_re[j].add(own.re);
            self.mean_im[j].add(own.im);
            for i in 0..k {
                self.second[j * k + i].add(gains[(i, j)].norm_sqr());
            }
        }
        self.count += 1;
    }

    pub fn finish(&self, noise_power: f64) -> Result<SinrCoefficients> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("no realizations accumulated".into()));
        }
        let k = self.devices;
        let n = self.count as f64;
        let signal = self
            .mean_re
            .iter()
            .zip(&self.mean_im)
            .map(|(re, im)| (re.value() / n).powi(2) + (im.value() / n).powi(2))
            .collect();
        let second_moment = DMatrix::from_fn(k, k, |j, i| self.second[j * k + i].value() / n);
        SinrCoefficients::new(signal, second_moment, noise_power)
    }
}

/// Sample-mean estimate of `(a, G)` from true channels and the precoders
/// built from their estimates.
pub fn estimate_coefficients(
    channels: &ChannelBatch,
    precoders: &PrecoderBatch,
    noise_power: f64,
) -> Result<SinrCoefficients> {
    let n = channels.len();
    if n == 0 || precoders.realizations.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{n} channel realizations but {} precoder realizations",
            precoders.realizations.len()
        )));
    }
    let mut acc = CoefficientAccumulator::new(channels.devices());
    for (h, w) in channels.realizations.iter().zip(&precoders.realizations) {
        acc.add(&w.ad_mul(h));
    }
    acc.finish(noise_power)
}

/// Same as [`estimate_coefficients`] with the precoders of `scheme`, but
/// works on `K x K` products per realization and never forms the
/// `M x K` precoding matrices.
pub fn coefficients_for(
    channels: &ChannelBatch,
    estimates: &EstimateBatch,
    scheme: Precoder,
    noise_power: f64,
    pilot_power: f64,
) -> Result<SinrCoefficients> {
    let n = channels.len();
    if n == 0 || estimates.realizations.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{n} channel realizations but {} estimates",
            estimates.realizations.len()
        )));
    }
    let reg = match scheme {
        Precoder::Mr => 0.0,
        Precoder::Mmse => mmse_regularizer(estimates, noise_power, pilot_power)?,
    };
    let mut acc = CoefficientAccumulator::new(channels.devices());
    for (r, (h, h_hat)) in channels
        .realizations
        .iter()
        .zip(&estimates.realizations)
        .enumerate()
    {
        acc.add(&effective_gains(h_hat, h, scheme, reg, r)?);
    }
    acc.finish(noise_power)
}

/// Coherence-block and packet parameters that turn SINR into rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModel {
    pub tau: usize,
    pub pilot_length: usize,
    pub bandwidth_hz: f64,
    pub coherence_bandwidth_hz: f64,
    pub packet_bits: u64,
}

impl RateModel {
    pub fn new(
        tau: usize,
        pilot_length: usize,
        bandwidth_hz: f64,
        coherence_bandwidth_hz: f64,
        packet_bits: u64,
    ) -> Result<Self> {
        if pilot_length >= tau {
            return Err(Error::InvalidArgument(format!(
                "pilot length {pilot_length} must be below tau = {tau}"
            )));
        }
        Ok(Self {
            tau,
            pilot_length,
            bandwidth_hz,
            coherence_bandwidth_hz,
            packet_bits,
        })
    }

    pub fn from_config(cfg: &SystemConfig) -> Result<Self> {
        Self::new(
            cfg.tau,
            cfg.pilot_length(),
            cfg.bandwidth_hz,
            cfg.coherence_bandwidth_hz,
            cfg.packet_bits,
        )
    }

    fn data_symbols(&self) -> f64 {
        (self.tau - self.pilot_length) as f64
    }

    /// Fraction of each coherence block carrying downlink data.
    pub fn prelog(&self) -> f64 {
        self.data_symbols() / self.tau as f64
    }

    /// Spectral efficiency in bit/s/Hz.
    pub fn spectral_efficiency(&self, gamma: f64) -> f64 {
        self.prelog() * gamma.ln_1p() / std::f64::consts::LN_2
    }

    /// Achievable rate in bit/s.
    pub fn rate(&self, gamma: f64) -> f64 {
        self.bandwidth_hz * self.spectral_efficiency(gamma)
    }

    /// Rate needed to deliver one packet per coherence block, bit/s.
    pub fn rate_threshold(&self) -> f64 {
        self.coherence_bandwidth_hz * self.packet_bits as f64 / self.data_symbols()
    }

    /// Smallest SINR whose rate reaches [`RateModel::rate_threshold`].
    pub fn sinr_threshold(&self) -> f64 {
        let exponent = self.rate_threshold() / (self.bandwidth_hz * self.prelog());
        exponent.exp2() - 1.0
    }
}

pub fn spectral_efficiency(gamma: &[f64], rm: &RateModel) -> Vec<f64> {
    gamma.iter().map(|&g| rm.spectral_efficiency(g)).collect()
}
