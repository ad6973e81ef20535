//! Maximum-ratio and MMSE downlink precoders.
//!
//! Precoders are normalized to unit norm so that the allocated power is the
//! transmit power of each stream. Because the estimation-error covariances
//! are scaled identities, the MMSE regularizer collapses to
//! `(sum_i c_i + sigma^2 / p) I_M`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::{EstimateBatch, C64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precoder {
    Mr,
    Mmse,
}

impl Precoder {
    pub const ALL: [Precoder; 2] = [Precoder::Mr, Precoder::Mmse];

    pub fn name(self) -> &'static str {
        match self {
            Precoder::Mr => "mr",
            Precoder::Mmse => "mmse",
        }
    }
}

impl fmt::Display for Precoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Precoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mr" | "mrt" => Ok(Precoder::Mr),
            "mmse" => Ok(Precoder::Mmse),
            other => Err(Error::InvalidArgument(format!(
                "unknown precoder `{other}`"
            ))),
        }
    }
}

/// Unit-norm precoders for every realization.
#[derive(Debug, Clone)]
pub struct PrecoderBatch {
    /// One `M x K` matrix per realization; column `k` is `w_k`.
    pub realizations: Vec<DMatrix<C64>>,
    pub scheme: Precoder,
}

/// Normalizes each column in place. Fails on a zero column.
fn normalize_columns(v: &mut DMatrix<C64>, realization: usize) -> Result<()> {
    for (device, mut col) in v.column_iter_mut().enumerate() {
        let norm = col.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateRealization {
                realization,
                device,
                reason: "precoding direction has zero or non-finite norm",
            });
        }
        col.unscale_mut(norm);
    }
    Ok(())
}

pub fn mr_precoder(est: &EstimateBatch) -> Result<PrecoderBatch> {
    let realizations = est
        .realizations
        .iter()
        .enumerate()
        .map(|(n, h_hat)| {
            let mut w = h_hat.clone();
            normalize_columns(&mut w, n)?;
            Ok(w)
        })
        .collect::<Result<_>>()?;
    Ok(PrecoderBatch {
        realizations,
        scheme: Precoder::Mr,
    })
}

/// MMSE directions `(H H^H + reg I_M)^{-1} H` through an `M x M` Cholesky
/// solve. Columns are not normalized.
pub fn mmse_directions_full(h_hat: &DMatrix<C64>, reg: f64) -> Option<DMatrix<C64>> {
    let m = h_hat.nrows();
    let gram =
        h_hat * h_hat.adjoint() + DMatrix::<C64>::from_diagonal_element(m, m, C64::from(reg));
    let chol = gram.cholesky()?;
    Some(chol.solve(h_hat))
}

/// Same directions via the push-through identity
/// `(H H^H + reg I_M)^{-1} H = H (H^H H + reg I_K)^{-1}`, which only factors a
/// `K x K` matrix.
pub fn mmse_directions_woodbury(h_hat: &DMatrix<C64>, reg: f64) -> Option<DMatrix<C64>> {
    let k = h_hat.ncols();
    let gram =
        h_hat.adjoint() * h_hat + DMatrix::<C64>::from_diagonal_element(k, k, C64::from(reg));
    let chol = gram.cholesky()?;
    // gram^{-1} is Hermitian, so V^H = gram^{-1} H^H.
    Some(chol.solve(&h_hat.adjoint()).adjoint())
}

/// MMSE precoders from the estimates, the noise power and the pilot power.
pub fn mmse_precoder(
    est: &EstimateBatch,
    noise_power: f64,
    pilot_power: f64,
) -> Result<PrecoderBatch> {
    let reg = mmse_regularizer(est, noise_power, pilot_power)?;
    let realizations = est
        .realizations
        .iter()
        .enumerate()
        .map(|(n, h_hat)| {
            let mut v =
                mmse_directions_woodbury(h_hat, reg).ok_or(Error::DegenerateRealization {
                    realization: n,
                    device: 0,
                    reason: "MMSE Gram matrix is not positive definite",
                })?;
            normalize_columns(&mut v, n)?;
            Ok(v)
        })
        .collect::<Result<_>>()?;
    Ok(PrecoderBatch {
        realizations,
        scheme: Precoder::Mmse,
    })
}

pub fn mmse_regularizer(est: &EstimateBatch, noise_power: f64, pilot_power: f64) -> Result<f64> {
    let reg = est.model.total_error_var() + noise_power / pilot_power;
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "MMSE regularizer must be positive, got {reg}"
        )));
    }
    Ok(reg)
}

pub fn precode(
    est: &EstimateBatch,
    scheme: Precoder,
    noise_power: f64,
    pilot_power: f64,
) -> Result<PrecoderBatch> {
    match scheme {
        Precoder::Mr => mr_precoder(est),
        Precoder::Mmse => mmse_precoder(est, noise_power, pilot_power),
    }
}

/// Effective gains `gains[(i, k)] = w_i^H h_k` of one realization without
/// forming the precoders.
///
/// With `E = H_hat^H H` and `A = H_hat^H H_hat + reg I_K`, MR gives
/// `w_i^H h_k = E_ik / ‖h_hat_i‖` and MMSE gives `V^H H = A^{-1} E` with
/// `‖v_i‖^2 = (A^{-1} H_hat^H H_hat A^{-1})_ii`. Everything stays `K x K`.
pub fn effective_gains(
    h_hat: &DMatrix<C64>,
    h: &DMatrix<C64>,
    scheme: Precoder,
    reg: f64,
    realization: usize,
) -> Result<DMatrix<C64>> {
    let cross = h_hat.ad_mul(h);
    let gram = h_hat.ad_mul(h_hat);
    let k = gram.nrows();
    let (mut gains, norms_sq): (DMatrix<C64>, Vec<f64>) = match scheme {
        Precoder::Mr => (cross, (0..k).map(|i| gram[(i, i)].re).collect()),
        Precoder::Mmse => {
            let a = &gram + DMatrix::<C64>::from_diagonal_element(k, k, C64::from(reg));
            let chol = a.cholesky().ok_or(Error::DegenerateRealization {
                realization,
                device: 0,
                reason: "MMSE Gram matrix is not positive definite",
            })?;
            let gains = chol.solve(&cross);
            // (A^{-1} G)^H = G A^{-1}, so solving again gives A^{-1} G A^{-1}.
            let left = chol.solve(&gram);
            let both = chol.solve(&left.adjoint());
            (gains, (0..k).map(|i| both[(i, i)].re).collect())
        }
    };
    for (i, n2) in norms_sq.into_iter().enumerate() {
        let norm = n2.sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateRealization {
                realization,
                device: i,
                reason: "precoding direction has zero or non-finite norm",
            });
        }
        gains.row_mut(i).unscale_mut(norm);
    }
    Ok(gains)
}

/// `max_k |‖w_k‖ - 1|` over a batch.
pub fn max_norm_deviation(batch: &PrecoderBatch) -> f64 {
    batch
        .realizations
        .iter()
        .flat_map(|w| {
            w.column_iter()
                .map(|c| (c.norm() - 1.0).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_normal, EstimationModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch_of(h: DMatrix<C64>, error_var: Vec<f64>) -> EstimateBatch {
        let k = h.ncols();
        EstimateBatch {
            realizations: vec![h],
            model: EstimationModel {
                phi: vec![1.0; k],
                error_var,
                pilot_length: k,
                pilot_noise: 0.0,
            },
        }
    }

    fn random_h(rng: &mut ChaCha8Rng, m: usize, k: usize) -> DMatrix<C64> {
        DMatrix::from_fn(m, k, |_, _| complex_normal(rng, 1.0))
    }

    fn rel_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn mr_normalizes() {
        let mut h = DMatrix::zeros(4, 1);
        h[(0, 0)] = C64::new(2.0, 0.0);
        let w = mr_precoder(&batch_of(h, vec![0.0])).unwrap();
        assert_eq!(w.realizations[0][(0, 0)], C64::new(1.0, 0.0));
        assert!(w.realizations[0]
            .iter()
            .skip(1)
            .all(|z| *z == C64::new(0.0, 0.0)));
    }

    #[test]
    fn mr_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_h(&mut rng, 6, 3);
        let a = mr_precoder(&batch_of(h.clone(), vec![0.0; 3])).unwrap();
        let b = mr_precoder(&batch_of(h * C64::from(37.5), vec![0.0; 3])).unwrap();
        assert!(rel_diff(&a.realizations[0], &b.realizations[0]) < 1e-14);
    }

    #[test]
    fn zero_estimate_is_degenerate() {
        let h = DMatrix::zeros(3, 2);
        assert!(matches!(
            mr_precoder(&batch_of(h.clone(), vec![0.0; 2])),
            Err(Error::DegenerateRealization { .. })
        ));
        assert!(mmse_precoder(&batch_of(h, vec![0.0; 2]), 1.0, 1.0).is_err());
    }

    #[test]
    fn mmse_orthogonal_channels() {
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(1.0, 0.0),
            ],
        );
        for reg in [1e-6, 0.3, 12.0] {
            let w = mmse_precoder(&batch_of(h.clone(), vec![reg / 2.0; 2]), 0.0, 1.0).unwrap();
            assert!(rel_diff(&w.realizations[0], &h) < 1e-14);
        }
    }

    #[test]
    fn single_device_mmse_equals_mr() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_h(&mut rng, 8, 1);
        let est = batch_of(h, vec![0.2]);
        let mr = mr_precoder(&est).unwrap();
        let mmse = mmse_precoder(&est, 0.5, 1.0).unwrap();
        assert!(rel_diff(&mmse.realizations[0], &mr.realizations[0]) < 1e-12);
    }

    #[test]
    fn large_regularizer_tends_to_mr() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_h(&mut rng, 8, 3);
        let est = batch_of(h, vec![0.0; 3]);
        let mr = mr_precoder(&est).unwrap();
        let mmse = mmse_precoder(&est, 1e9, 1.0).unwrap();
        assert!(rel_diff(&mmse.realizations[0], &mr.realizations[0]) < 1e-7);
    }

    #[test]
    fn solves_match_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let h = random_h(&mut rng, 6, 3);
            let reg = 0.37;
            let a = &h * h.adjoint() + DMatrix::from_diagonal_element(6, 6, C64::from(reg));
            let explicit = a.try_inverse().unwrap() * &h;
            let full = mmse_directions_full(&h, reg).unwrap();
            let push = mmse_directions_woodbury(&h, reg).unwrap();
            assert!(rel_diff(&full, &explicit) < 1e-10);
            assert!(rel_diff(&push, &full) < 1e-8);
        }
    }

    #[test]
    fn woodbury_matches_full_at_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_h(&mut rng, 100, 10) * C64::from(3e-7);
        let reg = 2e-12;
        let full = mmse_directions_full(&h, reg).unwrap();
        let push = mmse_directions_woodbury(&h, reg).unwrap();
        assert!(rel_diff(&push, &full) < 1e-8);
    }

    #[test]
    fn effective_gains_match_explicit_precoders() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (m, k) in [(100, 10), (8, 3), (4, 1)] {
            let h_hat = random_h(&mut rng, m, k) * C64::from(2e-6);
            let h = &h_hat + random_h(&mut rng, m, k) * C64::from(5e-7);
            let est = batch_of(h_hat.clone(), vec![1e-13; k]);
            for scheme in Precoder::ALL {
                let w = precode(&est, scheme, 4e-13, 0.2).unwrap();
                let reg = mmse_regularizer(&est, 4e-13, 0.2).unwrap();
                let direct = w.realizations[0].ad_mul(&h);
                let fast = effective_gains(&h_hat, &h, scheme, reg, 0).unwrap();
                assert!(rel_diff(&fast, &direct) < 1e-10, "{scheme} M={m} K={k}");
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("MR".parse::<Precoder>().unwrap(), Precoder::Mr);
        assert_eq!("mrt".parse::<Precoder>().unwrap(), Precoder::Mr);
        assert_eq!(" mmse".parse::<Precoder>().unwrap(), Precoder::Mmse);
        assert!("zf".parse::<Precoder>().is_err());
    }
}
