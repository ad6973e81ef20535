use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use urllc_mimo::channel::{draw_channels_with, estimate_channels, EstimationModel};
use urllc_mimo::harness::{emit_results, run_cell, run_sweep, sinr_histogram, Manifest, SweepSpec};
use urllc_mimo::power::{equal_power, Strategy};
use urllc_mimo::precoding::Precoder;
use urllc_mimo::scenario::SystemConfig;
use urllc_mimo::sinr::{coefficients_for, RateModel};

fn small_config() -> SystemConfig {
    let mut cfg = SystemConfig::default().with_devices(4, 1);
    cfg.antennas = 16;
    cfg.n_channel = Some(12);
    cfg.n_deployments = 40;
    cfg
}

#[test]
fn estimate_and_error_have_model_variances() {
    let beta = [1e-11, 2e-12, 5e-14];
    let noise = 1.6e-13;
    let model = EstimationModel::new(&beta, noise, 3, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ch = draw_channels_with(&beta, 64, 500, &mut rng).unwrap();
    let est = estimate_channels(&ch, &model, &mut rng).unwrap();
    for k in 0..beta.len() {
        let (mut est_power, mut err_power) = (0.0, 0.0);
        let mut cross = nalgebra::Complex::new(0.0, 0.0);
        let mut n = 0.0;
        for (h, h_hat) in ch.realizations.iter().zip(&est.realizations) {
            for m in 0..h.nrows() {
                let e = h[(m, k)] - h_hat[(m, k)];
                est_power += h_hat[(m, k)].norm_sqr();
                err_power += e.norm_sqr();
                cross += h_hat[(m, k)].conj() * e;
                n += 1.0;
            }
        }
        let (phi, c) = (model.phi[k], model.error_var[k]);
        assert!(
            (est_power / n / phi - 1.0).abs() < 0.02,
            "device {k} estimate power"
        );
        assert!(
            (err_power / n / c - 1.0).abs() < 0.02,
            "device {k} error power"
        );
        assert!(
            (cross / n).norm() / (phi * c).sqrt() < 0.02,
            "device {k} correlation"
        );
    }
}

#[test]
fn mmse_suppresses_interference() {
    let beta = vec![1e-11; 8];
    let noise = 1.6e-13;
    let model = EstimationModel::new(&beta, noise, 8, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let ch = draw_channels_with(&beta, 64, 200, &mut rng).unwrap();
    let est = estimate_channels(&ch, &model, &mut rng).unwrap();
    let mr = coefficients_for(&ch, &est, Precoder::Mr, noise, 0.2).unwrap();
    let mmse = coefficients_for(&ch, &est, Precoder::Mmse, noise, 0.2).unwrap();
    let rho = equal_power(8, 1.0).unwrap().rho;
    for k in 0..8 {
        let cross = |c: &urllc_mimo::sinr::SinrCoefficients| {
            (0..8)
                .filter(|&i| i != k)
                .map(|i| c.second_moment[(k, i)])
                .sum::<f64>()
        };
        assert!(cross(&mmse) < 0.2 * cross(&mr), "device {k}");
    }
    let rates = RateModel::new(100, 8, 20e6, 100e3, 256).unwrap();
    let se = |c: &urllc_mimo::sinr::SinrCoefficients| -> f64 {
        c.sinr(&rho)
            .iter()
            .map(|&g| rates.spectral_efficiency(g))
            .sum()
    };
    assert!(se(&mmse) > se(&mr));
}

#[test]
fn sweep_is_composition_of_cells() {
    let base = small_config();
    let spec = SweepSpec {
        k_values: (2..=10).collect(),
        f_values: vec![1],
        precoders: vec![Precoder::Mr],
        strategies: vec![Strategy::MaxMin],
        base: base.clone(),
    };
    let sweep = run_sweep(&spec, 0).unwrap();
    assert!(sweep.failures.is_empty());
    assert_eq!(sweep.reports.len(), 9);
    for report in &sweep.reports {
        let k = report.key.devices;
        let single = run_cell(&base.with_devices(k, 1), Precoder::Mr, Strategy::MaxMin, 1).unwrap();
        assert_eq!(&single, report, "K={k}");
    }
}

#[test]
fn strategies_and_precoders_share_deployments() {
    let spec = SweepSpec {
        k_values: vec![3, 4],
        f_values: vec![1],
        precoders: Precoder::ALL.to_vec(),
        strategies: vec![Strategy::Equal, Strategy::MaxMin],
        base: small_config(),
    };
    let reports = run_sweep(&spec, 0).unwrap().reports;
    let prints = |i: usize| -> Vec<u64> {
        reports[i]
            .per_deployment
            .iter()
            .map(|m| m.deployment_fingerprint)
            .collect()
    };
    let by_k: Vec<Vec<usize>> = [3, 4]
        .iter()
        .map(|&k| {
            (0..reports.len())
                .filter(|&i| reports[i].key.devices == k)
                .collect()
        })
        .collect();
    for group in &by_k {
        assert_eq!(group.len(), 4);
        for &i in group {
            assert_eq!(prints(i), prints(group[0]));
        }
    }
    assert_ne!(prints(by_k[0][0]), prints(by_k[1][0]));
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg = small_config();
    for strategy in [Strategy::Equal, Strategy::MaxMin, Strategy::MaxProd] {
        let one = run_cell(&cfg, Precoder::Mmse, strategy, 1).unwrap();
        let many = run_cell(&cfg, Precoder::Mmse, strategy, 8).unwrap();
        assert_eq!(one, many, "{strategy}");
    }
}

#[test]
fn device_outage_non_decreasing_in_packet_size() {
    let mut previous = -1.0;
    for bits in [0, 2_000, 20_000, 40_000, 60_000, 80_000, 120_000] {
        let mut cfg = small_config();
        cfg.packet_bits = bits;
        let r = run_cell(&cfg, Precoder::Mr, Strategy::Equal, 0).unwrap();
        if bits == 0 {
            assert_eq!(r.device_outage.estimate, 0.0);
        }
        assert!(r.device_outage.estimate >= previous, "b = {bits}");
        assert!(r.system_outage.estimate >= r.device_outage.estimate);
        previous = r.device_outage.estimate;
    }
    assert!(previous > 0.0);
}

#[test]
fn emitted_files_match_reports() {
    let cfg = small_config();
    let report = run_cell(&cfg, Precoder::Mr, Strategy::Equal, 0).unwrap();
    let spec = SweepSpec::single(&cfg, Precoder::Mr, Strategy::Equal);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_results(
        std::slice::from_ref(&report),
        &Manifest::new(&spec),
        dir.path(),
    )
    .unwrap();
    assert_eq!(files.len(), 4);

    let read = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap();
    let sum_se = read("sum_se.csv");
    let lines: Vec<&str> = sum_se.lines().collect();
    assert_eq!(
        lines[0],
        "K,f,precoder,strategy,sum_se_mean,sum_se_ci_lo,sum_se_ci_hi"
    );
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("4,1,mr,equal,"));

    let outage = read("outage.csv");
    let lines: Vec<&str> = outage.lines().collect();
    assert_eq!(
        lines[0],
        "K,f,precoder,strategy,device_outage,device_ci_lo,device_ci_hi,\
         system_outage,system_ci_lo,system_ci_hi,n_deployments"
    );
    assert_eq!(lines.len(), 2);
    assert!(lines[1].ends_with(",40"));

    let pdf = read("sinr_pdf.csv");
    let mut rows = pdf.lines();
    assert_eq!(
        rows.next().unwrap(),
        "K,f,precoder,strategy,bin_lo_db,bin_hi_db,count"
    );
    let total: u64 = rows
        .map(|r| r.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total as usize, report.sinr_samples_db.len());
    assert_eq!(report.sinr_samples_db.len(), 40 * 4);
    let hist_total: u64 = sinr_histogram(&report.sinr_samples_db)
        .iter()
        .map(|r| r.2)
        .sum();
    assert_eq!(hist_total, total);

    let manifest = Manifest::from_path(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.sweep, spec);
    assert_eq!(manifest.master_seed, cfg.seed);
}

#[test]
fn emit_reports_unwritable_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let spec = SweepSpec::single(&small_config(), Precoder::Mr, Strategy::Equal);
    let err = emit_results(&[], &Manifest::new(&spec), &blocker.join("out")).unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}
