//! Downlink power allocation: equal power, max-min SINR and max-product SINR.
//!
//! Both optimizing strategies work on a normalized instance where powers are
//! fractions of `Pmax` and the noise power is one:
//!
//! ```text
//! x_k = rho_k / Pmax,   a'_k = a_k Pmax / sigma^2,   G'_ki = G_ki Pmax / sigma^2
//! ```
//!
//! Every SINR is unchanged by this change of units, so the allocations are
//! invariant to a common scaling of `(a, G, sigma^2)`.
//!
//! Max-min bisects on the common SINR target. For a fixed target the
//! equal-SINR conditions form the linear system
//! `(diag(a' (1 + t) / t) - G') x = 1`; the target is feasible iff the solution
//! is non-negative and sums to at most one.
//!
//! Max-product substitutes `x_k = exp(q_k)`. The objective
//! `sum_k [q_k - ln(sum_i G''_ki exp(q_i) + 1)]` (with `G''` equal to `G'`
//! minus the coherent part on the diagonal) is concave in `q`, so projected
//! gradient ascent on the surface `sum_k exp(q_k) = 1` reaches the global
//! optimum.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sinr::SinrCoefficients;

/// Relative bisection gap at which max-min stops.
pub const BISECTION_TOL: f64 = 1e-8;
pub const BISECTION_MAX_STEPS: usize = 200;
/// Projected-gradient norm, relative to `sqrt(K)`, at which max-product stops.
pub const GRADIENT_TOL: f64 = 1e-8;
pub const GRADIENT_MAX_ITERS: usize = 10_000;

const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Equal,
    MaxMin,
    MaxProd,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Equal, Strategy::MaxMin, Strategy::MaxProd];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Equal => "equal",
            Strategy::MaxMin => "maxmin",
            Strategy::MaxProd => "maxprod",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace(['-', '_'], "")
            .as_str()
        {
            "equal" => Ok(Strategy::Equal),
            "maxmin" => Ok(Strategy::MaxMin),
            "maxprod" | "maxproduct" => Ok(Strategy::MaxProd),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy `{other}`"
            ))),
        }
    }
}

/// Evidence returned by each solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Certificate {
    Equal,
    MaxMin {
        /// Smallest SINR at the returned powers.
        common_sinr: f64,
        /// Largest `|gamma_k - t*| / t*`.
        spread: f64,
        /// Final relative bisection gap.
        gap: f64,
        steps: usize,
    },
    MaxProd {
        /// Norm of the projected gradient at the returned point.
        gradient_norm: f64,
        iterations: usize,
        converged: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    /// Powers in watts.
    pub rho: Vec<f64>,
    pub strategy: Strategy,
    pub certificate: Certificate,
}

pub fn equal_power(devices: usize, max_power: f64) -> Result<AllocationResult> {
    if devices == 0 {
        return Err(Error::InvalidArgument("no devices".into()));
    }
    check_budget(max_power)?;
    Ok(AllocationResult {
        rho: vec![max_power / devices as f64; devices],
        strategy: Strategy::Equal,
        certificate: Certificate::Equal,
    })
}

pub fn allocate(
    strategy: Strategy,
    coeffs: &SinrCoefficients,
    max_power: f64,
) -> Result<AllocationResult> {
    match strategy {
        Strategy::Equal => equal_power(coeffs.devices(), max_power),
        Strategy::MaxMin => maxmin_allocation(coeffs, max_power),
        Strategy::MaxProd => maxprod_allocation(coeffs, max_power),
    }
}

fn check_budget(max_power: f64) -> Result<()> {
    if max_power > 0.0 && max_power.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "power budget must be positive, got {max_power}"
        )))
    }
}

/// Instance in units of `Pmax` and `sigma^2`.
struct Normalized {
    signal: Vec<f64>,
    second_moment: DMatrix<f64>,
    /// Second moments with the coherent self term removed from the diagonal.
    interference: DMatrix<f64>,
}

impl Normalized {
    fn new(coeffs: &SinrCoefficients, max_power: f64) -> Self {
        let scale = max_power / coeffs.noise_power;
        let signal: Vec<f64> = coeffs.signal.iter().map(|a| a * scale).collect();
        let second_moment = &coeffs.second_moment * scale;
        let mut interference = second_moment.clone();
        for (k, a) in signal.iter().enumerate() {
            interference[(k, k)] = (interference[(k, k)] - a).max(0.0);
        }
        Self {
            signal,
            second_moment,
            interference,
        }
    }

    fn devices(&self) -> usize {
        self.signal.len()
    }

    /// Interference plus unit noise for every device.
    fn disturbance(&self, x: &[f64]) -> DVector<f64> {
        let x = DVector::from_column_slice(x);
        (&self.interference * x).add_scalar(1.0)
    }

    fn sinr(&self, x: &[f64]) -> Vec<f64> {
        let d = self.disturbance(x);
        (0..self.devices())
            .map(|k| x[k] * self.signal[k] / d[k])
            .collect()
    }

    /// Single-device full-power SINR of the weakest device; no common target
    /// can exceed it.
    fn common_sinr_upper_bound(&self) -> f64 {
        (0..self.devices())
            .map(|k| self.signal[k] / (self.interference[(k, k)] + 1.0))
            .fold(f64::INFINITY, f64::min)
    }

    /// Minimal powers meeting the common target `t`, if they exist.
    fn equal_sinr_powers(&self, t: f64) -> Option<Vec<f64>> {
        let k = self.devices();
        let mut system = -self.second_moment.clone();
        for i in 0..k {
            system[(i, i)] += self.signal[i] * (1.0 + t) / t;
        }
        let x = system.lu().solve(&DVector::from_element(k, 1.0))?;
        x.iter()
            .all(|v| v.is_finite() && *v > 0.0)
            .then(|| x.iter().copied().collect())
    }
}

/// Max-min SINR allocation by bisection on the common SINR.
pub fn maxmin_allocation(coeffs: &SinrCoefficients, max_power: f64) -> Result<AllocationResult> {
    check_budget(max_power)?;
    let inst = Normalized::new(coeffs, max_power);
    let mut hi = inst.common_sinr_upper_bound();
    let mut lo = 0.0;
    let mut best: Option<Vec<f64>> = None;
    let mut steps = 0;
    while (hi - lo) / hi > BISECTION_TOL {
        if steps == BISECTION_MAX_STEPS {
            return Err(Error::BisectionNotConverged {
                steps,
                gap: (hi - lo) / hi,
            });
        }
        steps += 1;
        let t = 0.5 * (lo + hi);
        match inst.equal_sinr_powers(t) {
            Some(x) if x.iter().sum::<f64>() <= 1.0 => {
                lo = t;
                best = Some(x);
            }
            _ => hi = t,
        }
    }
    let mut x = match best {
        Some(x) => x,
        // The loop exits with lo > 0, which only happens after a feasible probe.
        None => unreachable!("bisection converged without a feasible target"),
    };
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);

    let gamma = inst.sinr(&x);
    let common = gamma.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = gamma
        .iter()
        .map(|g| (g - common).abs() / common)
        .fold(0.0, f64::max);
    Ok(AllocationResult {
        rho: x.iter().map(|v| v * max_power).collect(),
        strategy: Strategy::MaxMin,
        certificate: Certificate::MaxMin {
            common_sinr: common,
            spread,
            gap: (hi - lo) / hi,
            steps,
        },
    })
}

/// State of the max-product ascent at one point on `sum exp(q) = 1`.
struct Point {
    q: Vec<f64>,
    x: Vec<f64>,
    disturbance: DVector<f64>,
    /// Projected gradient.
    direction: Vec<f64>,
}

impl Point {
    fn new(inst: &Normalized, mut q: Vec<f64>) -> Self {
        let shift = log_sum_exp(&q);
        q.iter_mut().for_each(|v| *v -= shift);
        let x: Vec<f64> = q.iter().map(|v| v.exp()).collect();
        let disturbance = inst.disturbance(&x);
        // d/dq_j sum_k [q_k - ln D_k] = 1 - x_j sum_k G''_kj / D_k
        let inv: DVector<f64> = disturbance.map(|d| 1.0 / d);
        let pulled = inst.interference.tr_mul(&inv);
        let gradient: Vec<f64> = (0..x.len()).map(|j| 1.0 - x[j] * pulled[j]).collect();
        let gx: f64 = gradient.iter().zip(&x).map(|(g, v)| g * v).sum();
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let direction = gradient
            .iter()
            .zip(&x)
            .map(|(g, v)| g - gx / xx * v)
            .collect();
        Self {
            q,
            x,
            disturbance,
            direction,
        }
    }

    /// Objective increase from `self` to `next`, computed from differences so
    /// that tiny improvements near the optimum are not lost to rounding.
    fn gain_to(&self, inst: &Normalized, next: &Point) -> f64 {
        let dq: Vec<f64> = next.q.iter().zip(&self.q).map(|(a, b)| a - b).collect();
        let dx = DVector::from_iterator(
            dq.len(),
            self.x.iter().zip(&dq).map(|(x, d)| x * d.exp_m1()),
        );
        let dd = &inst.interference * dx;
        let own: f64 = dq.iter().sum();
        let lost: f64 = (0..dq.len())
            .map(|k| (dd[k] / self.disturbance[k]).ln_1p())
            .sum();
        own - lost
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-product SINR allocation by projected gradient ascent in the log
/// domain, started at equal power.
pub fn maxprod_allocation(coeffs: &SinrCoefficients, max_power: f64) -> Result<AllocationResult> {
    check_budget(max_power)?;
    let inst = Normalized::new(coeffs, max_power);
    let k = inst.devices();
    let tol = GRADIENT_TOL * (k as f64).sqrt();

    let mut point = Point::new(&inst, vec![0.0; k]);
    let mut step = 1.0;
    let mut iterations = 0;
    while norm(&point.direction) > tol && iterations < GRADIENT_MAX_ITERS {
        iterations += 1;
        let slope = dot(&point.direction, &point.direction);
        let mut trial = step;
        let next = loop {
            let q: Vec<f64> = point
                .q
                .iter()
                .zip(&point.direction)
                .map(|(q, d)| q + trial * d)
                .collect();
            let candidate = Point::new(&inst, q);
            if point.gain_to(&inst, &candidate) >= ARMIJO * trial * slope {
                break Some(candidate);
            }
            trial *= 0.5;
            if trial < 1e-30 {
                break None;
            }
        };
        // Armijo can only fail here once rounding dominates; keep the point.
        let Some(next) = next else { break };
        // Barzilai-Borwein guess for the next trial step.
        let s: Vec<f64> = next.q.iter().zip(&point.q).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next
            .direction
            .iter()
            .zip(&point.direction)
            .map(|(a, b)| a - b)
            .collect();
        let sy = dot(&s, &y);
        step = if sy < 0.0 {
            (dot(&s, &s) / -sy).clamp(1e-6, 1e6)
        } else {
            (2.0 * trial).min(1e6)
        };
        point = next;
    }

    let gradient_norm = norm(&point.direction);
    Ok(AllocationResult {
        rho: point.x.iter().map(|v| v * max_power).collect(),
        strategy: Strategy::MaxProd,
        certificate: Certificate::MaxProd {
            gradient_norm,
            iterations,
            converged: gradient_norm <= tol,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs(a: &[f64], g: &[f64], noise: f64) -> SinrCoefficients {
        let k = a.len();
        SinrCoefficients::new(a.to_vec(), DMatrix::from_row_slice(k, k, g), noise).unwrap()
    }

    fn min(v: &[f64]) -> f64 {
        v.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn log_product(v: &[f64]) -> f64 {
        v.iter().map(|g| g.ln()).sum()
    }

    #[test]
    fn equal_power_examples() {
        let r = equal_power(10, 39.8).unwrap();
        assert!(r.rho.iter().all(|&p| (p - 3.98).abs() < 1e-12));
        assert_eq!(equal_power(1, 5.0).unwrap().rho, vec![5.0]);
        assert!(equal_power(0, 1.0).is_err());
        assert!(equal_power(3, 0.0).is_err());
    }

    #[test]
    fn single_device_gets_everything() {
        let c = coeffs(&[2.0], &[2.5], 0.1);
        let mm = maxmin_allocation(&c, 4.0).unwrap();
        assert!((mm.rho[0] - 4.0).abs() < 1e-12);
        let Certificate::MaxMin { common_sinr, .. } = mm.certificate else {
            panic!()
        };
        let full = c.sinr(&[4.0])[0];
        assert!((common_sinr - full).abs() / full < 1e-12);
        let mp = maxprod_allocation(&c, 4.0).unwrap();
        assert!((mp.rho[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_instance_is_split_evenly() {
        let c = coeffs(&[3.0, 3.0], &[4.0, 0.5, 0.5, 4.0], 0.2);
        for r in [
            maxmin_allocation(&c, 2.0).unwrap(),
            maxprod_allocation(&c, 2.0).unwrap(),
        ] {
            assert!(
                (r.rho[0] - 1.0).abs() < 1e-6 && (r.rho[1] - 1.0).abs() < 1e-6,
                "{r:?}"
            );
        }
    }

    #[test]
    fn maxmin_equalizes_and_uses_full_power() {
        let c = coeffs(
            &[5.0, 0.4, 1.2],
            &[6.0, 0.3, 0.2, 0.1, 0.5, 0.05, 0.4, 0.2, 1.5],
            0.3,
        );
        let r = maxmin_allocation(&c, 10.0).unwrap();
        let gamma = c.sinr(&r.rho);
        let lo = min(&gamma);
        assert!(gamma.iter().all(|g| (g - lo).abs() / lo <= 1e-6));
        assert!((r.rho.iter().sum::<f64>() - 10.0).abs() <= 1e-9);
        let eq = equal_power(3, 10.0).unwrap();
        assert!(lo >= min(&c.sinr(&eq.rho)));
    }

    #[test]
    fn maxprod_beats_equal_and_maxmin() {
        let c = coeffs(
            &[5.0, 0.4, 1.2],
            &[6.0, 0.3, 0.2, 0.1, 0.5, 0.05, 0.4, 0.2, 1.5],
            0.3,
        );
        let mp = maxprod_allocation(&c, 10.0).unwrap();
        let Certificate::MaxProd { converged, .. } = mp.certificate else {
            panic!()
        };
        assert!(converged);
        assert!((mp.rho.iter().sum::<f64>() - 10.0).abs() <= 1e-9);
        let best = log_product(&c.sinr(&mp.rho));
        for other in [
            equal_power(3, 10.0).unwrap(),
            maxmin_allocation(&c, 10.0).unwrap(),
        ] {
            assert!(best >= log_product(&c.sinr(&other.rho)) - 1e-9);
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("max-min".parse::<Strategy>().unwrap(), Strategy::MaxMin);
        assert_eq!("MaxProd".parse::<Strategy>().unwrap(), Strategy::MaxProd);
        assert_eq!("equal".parse::<Strategy>().unwrap(), Strategy::Equal);
        assert!("greedy".parse::<Strategy>().is_err());
    }
}
