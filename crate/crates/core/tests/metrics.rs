use adalign::autodiff::Tensor;
use adalign::metrics::{discrepancy_report, macro_f1, micro_f1, ConfusionCounts, DiscrepancyConfig};
use adalign::sampler::{fixed_band_frequencies, SamplerKind, SamplerParams};
use adalign::spectral::{alignment_loss_value, empirical_cf, FrequencyMatrix};
use adalign::rng::{substream, Stream};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

#[test]
fn f1_examples() {
    assert_eq!(micro_f1(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
    assert_eq!(macro_f1(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
    assert_eq!(micro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.75);
    assert!((macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap() - 0.7333).abs() < 1e-4);
    // all predictions in one class out of two
    assert_eq!(micro_f1(&[0, 1, 0, 1], &[0, 0, 0, 0]).unwrap(), 0.5);
    assert!((macro_f1(&[0, 1, 0, 1], &[0, 0, 0, 0]).unwrap() - (2.0 / 3.0) / 2.0).abs() < 1e-12);
}

#[test]
fn f1_input_errors() {
    assert!(micro_f1(&[0, 1], &[0]).is_err());
    assert!(macro_f1(&[], &[]).is_err());
    assert!(matches!(ConfusionCounts::new(&[0, 3], &[0, 1], 2), Err(adalign::Error::LabelRange { label: 3, num_classes: 2 })));
}

#[test]
fn confusion_counts_by_hand() {
    let c = ConfusionCounts::new(&[0, 0, 1, 2, 2], &[0, 1, 1, 2, 0], 3).unwrap();
    assert_eq!((c.get(0, 0), c.get(0, 1), c.get(2, 0)), (1, 1, 1));
    assert_eq!((c.total(), c.correct()), (5, 3));
    let f1 = c.per_class_f1();
    assert_eq!(f1[1], Some(2.0 / 3.0));
}

fn labels(max_class: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..60).prop_flat_map(move |n| (proptest::collection::vec(0..max_class, n), proptest::collection::vec(0..max_class, n)))
}

proptest! {
    #[test]
    fn micro_f1_is_accuracy((truth, pred) in labels(5)) {
        let acc = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64;
        prop_assert_eq!(micro_f1(&truth, &pred).unwrap(), acc);
    }

    #[test]
    fn scores_ignore_class_names((truth, pred) in labels(4), perm in Just(vec![2usize, 0, 3, 1]).prop_shuffle()) {
        let relabel = |v: &[usize]| v.iter().map(|&c| perm[c]).collect::<Vec<_>>();
        let (rt, rp) = (relabel(&truth), relabel(&pred));
        prop_assert_eq!(micro_f1(&truth, &pred).unwrap(), micro_f1(&rt, &rp).unwrap());
        prop_assert!((macro_f1(&truth, &pred).unwrap() - macro_f1(&rt, &rp).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_is_a_fraction((truth, pred) in labels(6)) {
        let m = macro_f1(&truth, &pred).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
    }
}

fn report_config() -> DiscrepancyConfig {
    DiscrepancyConfig { frequencies: 1024, bandwidth_points: 200, ..DiscrepancyConfig::default() }
}

#[test]
fn identical_embeddings_report_no_discrepancy() {
    let z = gaussian(&mut ChaCha8Rng::seed_from_u64(1), 100, 4);
    let r = discrepancy_report(&z, &z, &SamplerParams::new(2, 4).unwrap(), &report_config()).unwrap();
    assert!(r.nsd < 1e-5);
    assert!(r.band_nsd.iter().all(|&(_, v)| v < 1e-5));
    assert_eq!(r.mmd, 0.0);
    assert_eq!(r.band_nsd.len(), 3);
}

#[test]
fn report_is_reproducible_and_formats_every_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (zs, zt) = (gaussian(&mut rng, 80, 3), gaussian(&mut rng, 80, 3));
    let sampler = SamplerParams::new(3, 3).unwrap();
    let a = discrepancy_report(&zs, &zt, &sampler, &report_config()).unwrap();
    let b = discrepancy_report(&zs, &zt, &sampler, &report_config()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_line().split(' ').count(), 6);
    assert!(a.to_line().starts_with("nsd:"));
    assert_eq!(a.csv_header(), "nsd,mmd,mmd_bandwidth,nsd_band_0_1,nsd_band_1_10,nsd_band_10_20");
    assert_eq!(a.csv_row().split(',').count(), 6);
    assert!(discrepancy_report(&zs, &zt, &SamplerParams::new(3, 5).unwrap(), &report_config()).is_err());
}

#[test]
fn translation_shows_up_in_phase_not_amplitude() {
    let zs = gaussian(&mut ChaCha8Rng::seed_from_u64(3), 200, 3);
    let zt = zs.map(|v| v + 0.8);
    let batch = fixed_band_frequencies(SamplerKind::Random, (0.0, 1.0), 2048, 3, &mut substream(3, Stream::Frequencies)).unwrap();
    let amp_only = alignment_loss_value(&zs, &zt, &batch.frequencies, &batch.weights, 1.0).unwrap();
    let phase_only = alignment_loss_value(&zs, &zt, &batch.frequencies, &batch.weights, 0.0).unwrap();
    assert!(amp_only < 1e-5, "{amp_only}");
    assert!(phase_only > 0.1, "{phase_only}");
    let cfg = |kappa| DiscrepancyConfig { kappa, ..report_config() };
    let sampler = SamplerParams::new(2, 3).unwrap();
    let r1 = discrepancy_report(&zs, &zt, &sampler, &cfg(1.0)).unwrap();
    let r0 = discrepancy_report(&zs, &zt, &sampler, &cfg(0.0)).unwrap();
    assert!(r1.nsd < r0.nsd);
}

/// Standardized Gaussian sample against a symmetric two-point sample with
/// the same mean and variance.
fn moment_matched(n: usize, sigma: f64, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let sd = (raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let gauss = raw.iter().map(|x| sigma * (x - mean) / sd).collect();
    let two_point = (0..n).map(|i| if i % 2 == 0 { sigma } else { -sigma }).collect();
    (Tensor::matrix(n, 1, gauss).unwrap(), Tensor::matrix(n, 1, two_point).unwrap())
}

fn moments(z: &Tensor) -> (f64, f64) {
    let n = z.rows() as f64;
    let mean = z.data().iter().sum::<f64>() / n;
    (mean, z.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

#[test]
fn moment_matched_shapes_are_told_apart() {
    let (gauss, two_point) = moment_matched(600, 2.0, 4);
    let ((m1, v1), (m2, v2)) = (moments(&gauss), moments(&two_point));
    assert!((m1 - m2).abs() < 1e-2 && (v1 - v2).abs() < 1e-2);
    let batch = fixed_band_frequencies(SamplerKind::Random, (0.0, 1.0), 1024, 1, &mut substream(4, Stream::Frequencies)).unwrap();
    let signal = alignment_loss_value(&gauss, &two_point, &batch.frequencies, &batch.weights, 0.7).unwrap();
    let (other, _) = moment_matched(600, 2.0, 5);
    let floor = alignment_loss_value(&gauss, &other, &batch.frequencies, &batch.weights, 0.7).unwrap();
    assert!(signal > 5.0 * floor, "{signal} vs {floor}");
}

#[test]
fn two_point_cf_is_a_cosine() {
    let (_, two_point) = moment_matched(10, 2.0, 6);
    let t = FrequencyMatrix::new(Tensor::matrix(3, 1, vec![0.0, 0.3, 1.7]).unwrap()).unwrap();
    let cf = empirical_cf(&two_point, &t).unwrap();
    for (m, &tm) in [0.0f64, 0.3, 1.7].iter().enumerate() {
        assert!((cf.real[m] - (2.0 * tm).cos()).abs() < 1e-12);
        assert!(cf.imag[m].abs() < 1e-12);
    }
}
