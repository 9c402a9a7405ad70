mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use layerpca::bridge::{BridgeError, GeneratorBridge};
use layerpca::pipeline::{pipeline_fit, sample_space, FitConfig, FitSpace, PipelineError};
use layerpca::toy::{FeatureCapture, Tap};
use layerpca::{
    bridge_handshake, GeneratorDescriptor, LatentSpace, LayeredLatentState, PrincipalBasis, PrincipalDirections,
    ToyBridge,
};

/// Wraps a toy bridge, records the largest `sample` request and fails the
/// `fail_at`-th call to `sample`.
struct Flaky {
    inner: ToyBridge,
    calls: AtomicUsize,
    largest: AtomicUsize,
    fail_at: Option<usize>,
}

impl Flaky {
    fn new(desc: GeneratorDescriptor, fail_at: Option<usize>) -> Self {
        Self {
            inner: ToyBridge::new(desc).unwrap(),
            calls: AtomicUsize::new(0),
            largest: AtomicUsize::new(0),
            fail_at,
        }
    }
}

impl GeneratorBridge for Flaky {
    fn descriptor_json(&self) -> Result<String, BridgeError> {
        self.inner.descriptor_json()
    }

    fn sample(&self, n: usize, seed: u64, start: u64) -> Result<Vec<Vec<f64>>, BridgeError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        self.largest.fetch_max(n, Ordering::SeqCst);
        if Some(call) == self.fail_at {
            return Err(BridgeError::Transport("connection reset".into()));
        }
        self.inner.sample(n, seed, start)
    }

    fn map(&self, latents: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BridgeError> {
        self.inner.map(latents)
    }

    fn features(&self, states: &[LayeredLatentState], layer: usize, tap: Tap) -> Result<Vec<Vec<f64>>, BridgeError> {
        self.inner.features(states, layer, tap)
    }

    fn synthesize(&self, state: &LayeredLatentState) -> Result<Vec<f64>, BridgeError> {
        self.inner.synthesize(state)
    }

    fn capture(&self, state: &LayeredLatentState) -> Result<FeatureCapture, BridgeError> {
        self.inner.capture(state)
    }
}

fn style() -> GeneratorDescriptor {
    GeneratorDescriptor::toy(LatentSpace::Style, 6)
}

#[test]
fn full_rank_style_basis_reconstructs_held_out_samples() {
    let bridge = ToyBridge::new(style()).unwrap();
    let fit = pipeline_fit(&bridge, &FitConfig::new(FitSpace::StyleW, 10_000, 16, 0)).unwrap();
    assert!(fit.directions.is_none());
    let desc = bridge_handshake(&bridge).unwrap();
    let (_, held_out) = sample_space(&bridge, &desc, FitSpace::StyleW, 99, 0, 200).unwrap();
    for w in &held_out {
        assert!(common::max_abs_diff(&fit.basis.reduce(w, 16).unwrap(), w) < 1e-4);
    }
}

/// Right singular vectors of the exact layer-0 Jacobian of the linear skip
/// toy, found by finite differences and the Jacobi eigensolver.
fn jacobian_right_vectors(bridge: &ToyBridge) -> common::Mat {
    let g = bridge.generator();
    let d = g.descriptor().latent_dim;
    let f = |z: Vec<f64>| g.features(&g.initial_state(&z).unwrap(), 0, Tap::Post).unwrap();
    let origin = f(vec![0.0; d]);
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            f(e).iter().zip(&origin).map(|(a, b)| a - b).collect()
        })
        .collect();
    let gram: common::Mat = (0..d)
        .map(|i| (0..d).map(|j| columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum()).collect())
        .collect();
    common::jacobi_eigen(&gram).1
}

#[test]
fn skip_feature_directions_recover_the_generator_structure() {
    let bridge = ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Skip, 6).linear(true)).unwrap();
    let space = FitSpace::Feature { layer: 0, tap: Tap::Post };
    let fit = pipeline_fit(&bridge, &FitConfig::new(space, 20_000, 6, 1).batch_size(5000)).unwrap();
    let dirs: PrincipalDirections = fit.directions.expect("feature fit");
    assert_eq!(dirs.source_layer(), "feature@0:post");
    assert_eq!(dirs.seed(), Some(1));
    let planted = jacobian_right_vectors(&bridge);
    for k in 0..6 {
        let truth: Vec<f64> = planted.iter().map(|row| row[k]).collect();
        let cos = common::cosine(&dirs.direction(k), &truth).abs();
        assert!(cos > 0.95, "component {k}: |cos| = {cos}");
    }
}

#[test]
fn interrupted_fit_resumes_to_the_same_basis() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("fit.ck.json");
    let cfg = FitConfig::new(FitSpace::StyleW, 3000, 8, 4).batch_size(500).checkpoint(&ck);

    let flaky = Flaky::new(style(), Some(3));
    match pipeline_fit(&flaky, &cfg) {
        Err(PipelineError::Partial { samples_done, checkpoint, .. }) => {
            assert_eq!(samples_done, 1500);
            assert_eq!(checkpoint.as_deref(), Some(ck.as_path()));
        }
        other => panic!("expected a partial failure, got {other:?}"),
    }
    assert!(ck.exists());

    let resumed = Flaky::new(style(), None);
    let fit = pipeline_fit(&resumed, &cfg).unwrap();
    assert_eq!(resumed.calls.load(Ordering::SeqCst), 3, "only the remaining batches are requested");

    let straight = pipeline_fit(&ToyBridge::new(style()).unwrap(), &FitConfig::new(FitSpace::StyleW, 3000, 8, 4).batch_size(500))
        .unwrap();
    assert_eq!(fit.basis, straight.basis);
}

#[test]
fn checkpoint_from_another_fit_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("fit.ck.json");
    let flaky = Flaky::new(style(), Some(1));
    let cfg = FitConfig::new(FitSpace::StyleW, 2000, 8, 4).batch_size(500).checkpoint(&ck);
    assert!(pipeline_fit(&flaky, &cfg).is_err());
    let other = FitConfig::new(FitSpace::StyleW, 2000, 8, 5).batch_size(500).checkpoint(&ck);
    assert!(matches!(
        pipeline_fit(&ToyBridge::new(style()).unwrap(), &other),
        Err(PipelineError::CheckpointMismatch(_))
    ));
}

#[test]
fn million_sample_full_rank_configuration_streams_in_batches() {
    // Layer 2 of the skip toy has 8 x 8 x 8 = 512 features.
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("big.ck.json");
    let space = FitSpace::Feature { layer: 2, tap: Tap::Post };
    let cfg = FitConfig::new(space, 1_000_000, 512, 0).batch_size(1000).checkpoint(&ck);
    let flaky = Flaky::new(GeneratorDescriptor::toy(LatentSpace::Skip, 6), Some(2));
    match pipeline_fit(&flaky, &cfg) {
        Err(PipelineError::Partial { samples_done, .. }) => assert_eq!(samples_done, 2000),
        other => panic!("expected a partial failure, got {other:?}"),
    }
    assert_eq!(flaky.largest.load(Ordering::SeqCst), 1000);
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ck).unwrap()).unwrap();
    assert_eq!(saved["n"], 1_000_000);
    assert_eq!(saved["k"], 512);
}

#[test]
fn saved_outcome_carries_provenance_and_refits_identically() {
    let bridge = ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Skip, 6)).unwrap();
    let space = FitSpace::Feature { layer: 1, tap: Tap::Pre };
    let cfg = FitConfig::new(space, 1500, 6, 3).batch_size(400);
    let fit = pipeline_fit(&bridge, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = fit.save(dir.path()).unwrap();
    assert_eq!(paths.len(), 2);

    let (_, sidecar) = PrincipalBasis::load(&paths[0]).unwrap();
    let prov = sidecar.provenance.unwrap();
    assert_eq!((prov.seed, prov.n, prov.k), (Some(3), Some(1500), Some(6)));
    assert_eq!(prov.descriptor_hash.as_deref(), Some(fit.descriptor.hash().as_str()));
    let (_, dsidecar) = PrincipalDirections::load(&paths[1]).unwrap();
    assert_eq!(dsidecar.provenance.unwrap().space.as_deref(), Some("feature@1:pre"));

    let refit_space: FitSpace = prov.space.unwrap().parse().unwrap();
    let refit_cfg = FitConfig::new(refit_space, prov.n.unwrap(), prov.k.unwrap(), prov.seed.unwrap())
        .batch_size(prov.batch_size.unwrap());
    let refit = pipeline_fit(&bridge, &refit_cfg).unwrap();
    assert_eq!(refit.basis, fit.basis);
    assert_eq!(refit.directions, fit.directions);
}

#[test]
fn impossible_requests_fail_before_sampling() {
    let flaky = Flaky::new(GeneratorDescriptor::toy(LatentSpace::Skip, 6), None);
    assert!(pipeline_fit(&flaky, &FitConfig::new(FitSpace::StyleW, 100, 4, 0)).is_err());
    let deep = FitSpace::Feature { layer: 9, tap: Tap::Post };
    assert!(pipeline_fit(&flaky, &FitConfig::new(deep, 100, 4, 0)).is_err());
    assert!(pipeline_fit(&flaky, &FitConfig::new(FitSpace::Feature { layer: 0, tap: Tap::Post }, 4, 4, 0)).is_err());
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 0);
}
