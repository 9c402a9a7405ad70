mod common;

use layerpca::pipeline::{pipeline_fit, sample_space, FitConfig, FitSpace};
use layerpca::stats::{
    entropy, load_histograms, marginal_histogram, mutual_information, save_histograms, IndependenceReport,
    MarginalHistogram, ReplacementSampler,
};
use layerpca::{bridge_handshake, ComponentCoordinates, GeneratorDescriptor, LatentSpace, PrincipalBasis, ToyBridge};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn columns(values: &[Vec<f64>]) -> Vec<ComponentCoordinates> {
    values.iter().cloned().map(ComponentCoordinates).collect()
}

fn pairs() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2), 2..400)
}

proptest! {
    #[test]
    fn counts_sum_to_n_and_entropy_is_bounded(values in pairs(), bins in 2usize..64) {
        let coords = columns(&values);
        prop_assume!(values.len() >= bins && values.iter().any(|v| v[0] != values[0][0]));
        let h = marginal_histogram(&coords, 0, bins).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<u64>(), values.len() as u64);
        let occupied = h.counts.iter().filter(|&&c| c > 0).count() as f64;
        let e = entropy(&h);
        prop_assert!(e >= 0.0 && e <= occupied.log2() + 1e-9);
    }

    #[test]
    fn mutual_information_is_symmetric(values in pairs(), bins in 2usize..30) {
        prop_assume!(values.len() >= bins);
        prop_assume!(values.iter().any(|v| v[0] != values[0][0]) && values.iter().any(|v| v[1] != values[0][1]));
        let coords = columns(&values);
        let a = mutual_information(&coords, 0, 1, bins).unwrap();
        let b = mutual_information(&coords, 1, 0, bins).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!(a > -1e-12);
        let self_mi = mutual_information(&coords, 1, 1, bins).unwrap();
        prop_assert_eq!(self_mi, entropy(&marginal_histogram(&coords, 1, bins).unwrap()));
    }
}

#[test]
fn uniform_bin_counts_stay_within_five_sigma() {
    let mut r = common::rng(3);
    let values: Vec<Vec<f64>> = (0..1_000_000).map(|_| vec![r.random::<f64>()]).collect();
    let h = marginal_histogram(&columns(&values), 0, 1000).unwrap();
    let expected: f64 = 1000.0;
    let sigma = expected.sqrt();
    for (b, &c) in h.counts.iter().enumerate() {
        assert!((c as f64 - expected).abs() < 5.0 * sigma, "bin {b} has {c}");
    }
}

#[test]
fn degenerate_inputs_are_rejected_and_a_single_bin_has_zero_entropy() {
    let coords = columns(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
    assert!(marginal_histogram(&coords, 0, 2).is_err());
    assert!(mutual_information(&coords, 0, 1, 2).is_err());
    assert!(marginal_histogram(&coords, 1, 1).is_err());
    assert!(marginal_histogram(&coords, 1, 4).is_err());
    let spike = MarginalHistogram::from_parts(0, 3.0, 3.0, vec![7]).unwrap();
    assert_eq!(entropy(&spike), 0.0);
}

/// Basis and principal coordinates of 20,000 mapped style latents.
fn toy_coordinates() -> (PrincipalBasis, Vec<ComponentCoordinates>) {
    let bridge = ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Style, 2)).unwrap();
    let fit = pipeline_fit(&bridge, &FitConfig::new(FitSpace::StyleW, 20_000, 16, 1)).unwrap();
    let desc = bridge_handshake(&bridge).unwrap();
    let (_, w) = sample_space(&bridge, &desc, FitSpace::StyleW, 1, 0, 20_000).unwrap();
    let coords = w.iter().map(|v| fit.basis.project(v).unwrap()).collect();
    (fit.basis, coords)
}

#[test]
fn replacement_draws_reproduce_each_marginal() {
    let (basis, coords) = toy_coordinates();
    let hists: Vec<MarginalHistogram> = (0..16).map(|j| marginal_histogram(&coords, j, 40).unwrap()).collect();
    let sampler = ReplacementSampler::new(&hists, &basis).unwrap();
    let n = 100_000u64;
    let draws: Vec<ComponentCoordinates> = (0..n).map(|i| basis.project(&sampler.sample(17, i)).unwrap()).collect();
    for h in &hists {
        let j = h.component;
        let mean = draws.iter().map(|x| x.0[j]).sum::<f64>() / n as f64;
        let se = (h.variance() / n as f64).sqrt();
        assert!((mean - h.mean()).abs() < 5.0 * se, "component {j}: mean {mean} vs {}", h.mean());

        let mut observed = vec![0u64; h.bins()];
        for x in &draws {
            observed[h.bin_of(x.0[j])] += 1;
        }
        // Pool bins whose expected count is under 5 into one cell.
        let probs = h.probabilities();
        let (mut stat, mut cells) = (0.0, 0);
        let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
        for (o, p) in observed.iter().zip(&probs) {
            let e = p * n as f64;
            if e < 5.0 {
                pooled_obs += *o as f64;
                pooled_exp += e;
            } else {
                stat += (*o as f64 - e).powi(2) / e;
                cells += 1;
            }
        }
        if pooled_exp > 0.0 {
            stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp.max(1e-12);
            cells += 1;
        }
        let p_value = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat);
        assert!(p_value > 0.01, "component {j}: chi-squared {stat:.1} on {} dof, p = {p_value:.4}", cells - 1);
    }
}

#[test]
fn spike_histograms_always_return_the_mean() {
    let (basis, _) = toy_coordinates();
    let spikes: Vec<MarginalHistogram> =
        (0..16).map(|j| MarginalHistogram::from_parts(j, 0.0, 0.0, vec![10]).unwrap()).collect();
    let sampler = ReplacementSampler::new(&spikes, &basis).unwrap();
    for i in 0..10 {
        assert_eq!(sampler.sample(5, i), basis.mean());
    }
    assert!(ReplacementSampler::new(&spikes[..15], &basis).is_err());
    assert_eq!(sampler.sample(5, 3), sampler.sample(5, 3));
}

#[test]
fn report_serializes_and_histograms_persist() {
    let (basis, coords) = toy_coordinates();
    let report = IndependenceReport::compute(&coords, 50, 50, &[0, 1, 2, 3]).unwrap();
    assert_eq!(report.entropies.len(), 16);
    for (a, row) in report.mutual_information.iter().enumerate() {
        assert_eq!(row[a], report.entropies[a]);
    }
    let back: IndependenceReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
    let csv = report.to_csv(basis.variances());
    assert_eq!(csv.lines().count(), 17);
    let last: f64 = csv.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((last - 1.0).abs() < 1e-12);

    let hists: Vec<MarginalHistogram> = (0..16).map(|j| marginal_histogram(&coords, j, 30).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.gspc");
    save_histograms(&path, &hists).unwrap();
    assert_eq!(load_histograms(&path).unwrap(), hists);
}
