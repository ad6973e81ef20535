//! Scenario configuration, unit conversions and deployment generation.
//!
//! Everything past the configuration boundary works in linear units: watts
//! for powers and dimensionless linear gains for the large-scale fading.
//! dB and dBm values only appear when a configuration is read or a result is
//! reported.
//!
//! The base station sits at the center of a square cell. Devices are dropped
//! uniformly over the square and redrawn while they fall closer than
//! [`MIN_DISTANCE_M`] to the base station.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Minimum base-station to device distance in meters.
pub const MIN_DISTANCE_M: f64 = 35.0;

/// Thermal noise power spectral density at room temperature, dBm/Hz.
const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm) * 1e-3
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    linear_to_db(watts * 1e3)
}

/// Receiver noise power in watts over `bandwidth_hz` with the given noise
/// figure.
pub fn noise_power(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    dbm_to_watts(THERMAL_NOISE_DBM_HZ + linear_to_db(bandwidth_hz) + noise_figure_db)
}

/// Scenario parameters and Monte-Carlo run controls.
///
/// Serialized keys use the conventional symbols (`M`, `K`, `Pmax`, ...).
/// Powers are stored in watts; [`SystemConfig::from_json_str`] additionally
/// accepts `Pmax_dbm`/`p_dbm` (dBm) and `Pmax_db`/`p_db` (dBW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Base-station antennas.
    #[serde(rename = "M")]
    pub antennas: usize,
    /// Served devices.
    #[serde(rename = "K")]
    pub devices: usize,
    /// Pilots per device; the pilot length is `f * K`.
    #[serde(rename = "f")]
    pub pilots_per_device: usize,
    /// Channel uses per coherence block.
    pub tau: usize,
    /// Packet size in bits.
    #[serde(rename = "b")]
    pub packet_bits: u64,
    /// Transmission bandwidth, Hz.
    #[serde(rename = "B")]
    pub bandwidth_hz: f64,
    /// Coherence bandwidth, Hz.
    #[serde(rename = "Bc")]
    pub coherence_bandwidth_hz: f64,
    /// Base-station power budget, W.
    #[serde(rename = "Pmax")]
    pub max_power_w: f64,
    /// Device pilot power, W.
    #[serde(rename = "p")]
    pub pilot_power_w: f64,
    /// Base-station noise figure, dB.
    #[serde(rename = "NF")]
    pub noise_figure_db: f64,
    /// Median channel gain at 1 km, dB.
    #[serde(rename = "Upsilon")]
    pub median_gain_db: f64,
    /// Pathloss exponent.
    pub alpha: f64,
    /// Shadow-fading standard deviation, dB.
    pub sigma_sf: f64,
    /// Side of the square cell, m.
    pub cell_side: f64,
    pub n_deployments: usize,
    /// Channel realizations per deployment. `None` means `B / Bc`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_channel: Option<usize>,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            antennas: 100,
            devices: 10,
            pilots_per_device: 1,
            tau: 100,
            packet_bits: 256,
            bandwidth_hz: 20e6,
            coherence_bandwidth_hz: 100e3,
            max_power_w: dbm_to_watts(46.0),
            pilot_power_w: dbm_to_watts(23.0),
            noise_figure_db: 7.0,
            median_gain_db: -148.1,
            alpha: 3.76,
            sigma_sf: 7.0,
            cell_side: 500.0,
            n_deployments: 1000,
            n_channel: None,
            seed: 0x5eed_2020,
        }
    }
}

impl SystemConfig {
    /// Parses a JSON configuration. Missing keys take their default value.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("malformed JSON: {e}")))?;
        Self::from_json_value(value)
    }

    pub fn from_json_value(value: Value) -> Result<Self> {
        let Value::Object(input) = value else {
            return Err(Error::InvalidConfig("expected a JSON object".into()));
        };
        let Value::Object(mut merged) =
            serde_json::to_value(Self::default()).expect("default config serializes")
        else {
            unreachable!()
        };
        let mut seen = BTreeMap::new();
        for (key, val) in input {
            let (base, converted) = resolve_unit_suffix(&key, val)?;
            if let Some(previous) = seen.insert(base.clone(), key.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "`{key}` and `{previous}` both set `{base}`"
                )));
            }
            merged.insert(base, converted);
        }
        let cfg: Self = serde_json::from_value(Value::Object(merged))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.antennas == 0 || self.devices == 0 || self.pilots_per_device == 0 {
            return fail("M, K and f must be at least 1".into());
        }
        if self.pilot_length() >= self.tau {
            return fail(format!(
                "pilot length f*K = {} leaves no data symbols in tau = {}",
                self.pilot_length(),
                self.tau
            ));
        }
        for (name, v) in [
            ("B", self.bandwidth_hz),
            ("Bc", self.coherence_bandwidth_hz),
            ("Pmax", self.max_power_w),
            ("p", self.pilot_power_w),
            ("alpha", self.alpha),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be finite and positive, got {v}"));
            }
        }
        for (name, v) in [
            ("NF", self.noise_figure_db),
            ("Upsilon", self.median_gain_db),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if !(self.sigma_sf.is_finite() && self.sigma_sf >= 0.0) {
            return fail(format!(
                "sigma_sf must be non-negative, got {}",
                self.sigma_sf
            ));
        }
        if !(self.cell_side.is_finite() && self.cell_side > 2.0 * MIN_DISTANCE_M) {
            return fail(format!(
                "cell_side must exceed twice the {MIN_DISTANCE_M} m exclusion radius"
            ));
        }
        if self.n_deployments == 0 {
            return fail("n_deployments must be at least 1".into());
        }
        if self.n_channel == Some(0) {
            return fail("n_channel must be at least 1".into());
        }
        if self.n_channel.is_none() && self.default_channel_count() == 0 {
            return fail("B / Bc must be at least 1 when n_channel is not given".into());
        }
        Ok(())
    }

    /// Pilot length `tau_p = f * K`.
    pub fn pilot_length(&self) -> usize {
        self.pilots_per_device * self.devices
    }

    fn default_channel_count(&self) -> usize {
        (self.bandwidth_hz / self.coherence_bandwidth_hz).round() as usize
    }

    /// Channel realizations averaged per deployment.
    pub fn channel_count(&self) -> usize {
        self.n_channel
            .unwrap_or_else(|| self.default_channel_count())
    }

    pub fn noise_power(&self) -> f64 {
        noise_power(self.bandwidth_hz, self.noise_figure_db)
    }

    pub fn with_devices(&self, devices: usize, pilots_per_device: usize) -> Self {
        Self {
            devices,
            pilots_per_device,
            ..self.clone()
        }
    }
}

fn resolve_unit_suffix(key: &str, val: Value) -> Result<(String, Value)> {
    const POWER_KEYS: [&str; 2] = ["Pmax", "p"];
    let (base, to_watts): (&str, fn(f64) -> f64) = if let Some(base) = key.strip_suffix("_dbm") {
        (base, dbm_to_watts)
    } else if let Some(base) = key.strip_suffix("_db") {
        (base, db_to_linear)
    } else {
        return Ok((key.to_owned(), val));
    };
    if !POWER_KEYS.contains(&base) {
        return Err(Error::InvalidConfig(format!(
            "unit suffix on `{key}`: only Pmax and p accept _db/_dbm"
        )));
    }
    let level = val
        .as_f64()
        .ok_or_else(|| Error::InvalidConfig(format!("`{key}` must be a number")))?;
    let watts = serde_json::Number::from_f64(to_watts(level))
        .ok_or_else(|| Error::InvalidConfig(format!("`{key}` is out of range")))?;
    Ok((base.to_owned(), Value::Number(watts)))
}

/// Linear large-scale gain for a device at `distance_m` with shadowing
/// `shadowing_db`.
pub fn large_scale_gain(distance_m: f64, shadowing_db: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(distance_m.is_finite() && distance_m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be positive, got {distance_m}"
        )));
    }
    let gain_db =
        cfg.median_gain_db - 10.0 * cfg.alpha * (distance_m / 1000.0).log10() + shadowing_db;
    Ok(db_to_linear(gain_db))
}

/// One drop of `K` devices in the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    /// Positions relative to the base station, m.
    pub positions: Vec<[f64; 2]>,
    pub distance_m: Vec<f64>,
    pub shadowing_db: Vec<f64>,
    /// Large-scale fading coefficients, linear.
    pub beta: Vec<f64>,
}

impl Deployment {
    /// Builds a deployment from explicit positions and shadowing draws.
    pub fn from_parts(
        positions: Vec<[f64; 2]>,
        shadowing_db: Vec<f64>,
        cfg: &SystemConfig,
    ) -> Result<Self> {
        if positions.len() != shadowing_db.len() {
            return Err(Error::InvalidArgument(
                "positions and shadowing lengths differ".into(),
            ));
        }
        let distance_m: Vec<f64> = positions.iter().map(|[x, y]| x.hypot(*y)).collect();
        let beta = distance_m
            .iter()
            .zip(&shadowing_db)
            .map(|(&d, &f)| large_scale_gain(d, f, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            positions,
            distance_m,
            shadowing_db,
            beta,
        })
    }

    pub fn devices(&self) -> usize {
        self.beta.len()
    }

    /// Hash of the exact bit patterns of positions and shadowing draws.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        for ([x, y], f) in self.positions.iter().zip(&self.shadowing_db) {
            x.to_bits().hash(&mut hasher);
            y.to_bits().hash(&mut hasher);
            f.to_bits().hash(&mut hasher);
        }
        hasher.finish()
    }
}

/// Draws a deployment: uniform positions over the square (outside the
/// exclusion radius) and i.i.d. Gaussian shadowing in dB.
pub fn generate_deployment<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Deployment {
    let half = cfg.cell_side / 2.0;
    let mut positions = Vec::with_capacity(cfg.devices);
    let mut shadowing_db = Vec::with_capacity(cfg.devices);
    for _ in 0..cfg.devices {
        let position = loop {
            let x = rng.random_range(-half..=half);
            let y = rng.random_range(-half..=half);
            if x.hypot(y) >= MIN_DISTANCE_M {
                break [x, y];
            }
        };
        positions.push(position);
        let z: f64 = StandardNormal.sample(rng);
        shadowing_db.push(cfg.sigma_sf * z);
    }
    Deployment::from_parts(positions, shadowing_db, cfg)
        .expect("positions outside the exclusion radius have positive distance")
}

/// Draws shadowing values; exposed for statistics tests.
pub fn draw_shadowing<R: Rng + ?Sized>(sigma_db: f64, count: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma_db).expect("finite non-negative std");
    normal.sample_iter(rng).take(count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_power_table_values() {
        let n = noise_power(20e6, 7.0);
        assert!((watts_to_dbm(n) - (-93.9897)).abs() < 1e-4);
        assert!((n - 3.99e-13).abs() / 3.99e-13 < 2e-3);
        assert!((watts_to_dbm(noise_power(1.0, 0.0)) + 174.0).abs() < 1e-12);
        assert!((watts_to_dbm(noise_power(10.0, 0.0)) + 164.0).abs() < 1e-12);
    }

    #[test]
    fn large_scale_gain_examples() {
        let cfg = SystemConfig::default();
        let db = |d, f| linear_to_db(large_scale_gain(d, f, &cfg).unwrap());
        assert!((db(1000.0, 0.0) + 148.1).abs() < 1e-10);
        assert!((db(250.0, 0.0) + 125.462_544).abs() < 1e-6);
        assert!((db(1000.0, 7.0) + 141.1).abs() < 1e-10);
        assert!(large_scale_gain(0.0, 0.0, &cfg).is_err());
        assert!(large_scale_gain(-3.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn corner_device() {
        let cfg = SystemConfig {
            sigma_sf: 0.0,
            devices: 1,
            ..Default::default()
        };
        let dep = Deployment::from_parts(vec![[250.0, 250.0]], vec![0.0], &cfg).unwrap();
        assert!((dep.distance_m[0] - 353.5534).abs() < 1e-4);
        // -148.1 - 37.6 * log10(0.353553) = -131.1220
        assert!((linear_to_db(dep.beta[0]) + 131.1220).abs() < 1e-4);
    }

    #[test]
    fn deployment_is_deterministic_and_in_region() {
        let cfg = SystemConfig::default();
        let a = generate_deployment(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = generate_deployment(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        for ([x, y], d) in a.positions.iter().zip(&a.distance_m) {
            assert!(x.abs() <= 250.0 && y.abs() <= 250.0);
            assert!(*d >= MIN_DISTANCE_M);
        }
        assert!(a.beta.iter().all(|&b| b > 0.0));
    }

    #[test]
    fn shadowing_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = draw_shadowing(7.0, n, &mut rng).iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * 7.0 / (n as f64).sqrt());
    }

    #[test]
    fn gain_decreases_with_distance_without_shadowing() {
        let cfg = SystemConfig::default();
        let mut prev = f64::INFINITY;
        for i in 0..400 {
            let d = MIN_DISTANCE_M + i as f64;
            let g = large_scale_gain(d, 0.0, &cfg).unwrap();
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn json_config_with_unit_suffixes() {
        let cfg = SystemConfig::from_json_str(
            r#"{"M": 64, "K": 4, "Pmax_dbm": 46, "p_dbm": 23, "n_channel": 50, "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(cfg.antennas, 64);
        assert_eq!(cfg.devices, 4);
        assert!((cfg.max_power_w - 39.810717).abs() < 1e-5);
        assert!((cfg.pilot_power_w - 0.199526).abs() < 1e-6);
        assert_eq!(cfg.channel_count(), 50);
        assert_eq!(SystemConfig::default().channel_count(), 200);

        let dbw = SystemConfig::from_json_str(r#"{"Pmax_db": 16}"#).unwrap();
        assert!((dbw.max_power_w - 39.810717).abs() < 1e-5);
    }

    #[test]
    fn json_config_rejections() {
        for bad in [
            r#"{"Pmax": 10, "Pmax_dbm": 40}"#,
            r#"{"alpha_db": 3}"#,
            r#"{"bogus": 1}"#,
            r#"{"K": 10, "f": 10}"#,
            r#"{"n_channel": 0}"#,
            r#"{"p": 0}"#,
            r#"[1, 2]"#,
        ] {
            assert!(SystemConfig::from_json_str(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = SystemConfig {
            n_channel: Some(17),
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(SystemConfig::from_json_str(&text).unwrap(), cfg);
    }
}
