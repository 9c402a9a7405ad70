mod common;

use layerpca::toy::{sample_latents, Tap};
use layerpca::{GeneratorDescriptor, LatentSpace, LayeredLatentState, ToyGenerator};
use rand::Rng;

fn generator(family: LatentSpace, linear: bool) -> ToyGenerator {
    ToyGenerator::new(GeneratorDescriptor::toy(family, 21).linear(linear)).unwrap()
}

fn combos() -> Vec<(LatentSpace, bool)> {
    vec![
        (LatentSpace::Style, false),
        (LatentSpace::Style, true),
        (LatentSpace::Skip, false),
        (LatentSpace::Skip, true),
    ]
}

fn flatten(s: &LayeredLatentState) -> Vec<f64> {
    s.to_tensor().to_f64()
}

fn random_state(g: &ToyGenerator, seed: u64) -> LayeredLatentState {
    let z = g.sample_latents(1, seed).remove(0);
    g.initial_state(&z).unwrap()
}

/// `alpha * a + (1 - alpha) * b`, per vector.
fn blend(a: &LayeredLatentState, b: &LayeredLatentState, alpha: f64) -> LayeredLatentState {
    LayeredLatentState::blend(a, b, alpha).unwrap()
}

#[test]
fn perturbing_layer_j_never_reaches_earlier_layers() {
    for (family, linear) in combos() {
        let g = generator(family, linear);
        let layers = g.descriptor().layer_count;
        let mut r = common::rng(1);
        for pair in 0..100u64 {
            let s = random_state(&g, pair);
            let j = r.random_range(0..layers);
            let bumped: Vec<f64> = s.layer(j).iter().map(|v| v + r.random_range(-1.0..1.0)).collect();
            let t = s.clone().with_layer(j, bumped).unwrap();
            let (a, b) = (g.synthesize(&s).unwrap(), g.synthesize(&t).unwrap());
            for i in 0..j {
                for tap in [Tap::Pre, Tap::Post] {
                    assert_eq!(a.layer(i, tap), b.layer(i, tap), "{family} linear={linear} pair {pair}");
                }
            }
            for i in j..layers {
                assert_ne!(a.layer(i, Tap::Pre), b.layer(i, Tap::Pre), "{family} layer {i} ignored layer {j}");
            }
            assert_ne!(a.image, b.image);
        }
    }
}

#[test]
fn linear_mapping_is_affine() {
    let g = generator(LatentSpace::Style, true);
    let zs = g.sample_latents(3, 4);
    for alpha in [-0.5, 0.3, 0.9, 2.0] {
        let mixed: Vec<f64> = zs[0].iter().zip(&zs[1]).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let lhs = g.map_latent(&mixed).unwrap();
        let (m1, m2) = (g.map_latent(&zs[0]).unwrap(), g.map_latent(&zs[1]).unwrap());
        let rhs: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        assert!(common::max_abs_diff(&lhs, &rhs) < 1e-5);
    }
}

#[test]
fn nonlinear_mapping_is_not_affine() {
    let g = generator(LatentSpace::Style, false);
    let zs = g.sample_latents(2, 4);
    let mid: Vec<f64> = zs[0].iter().zip(&zs[1]).map(|(a, b)| 0.5 * (a + b)).collect();
    let (m1, m2) = (g.map_latent(&zs[0]).unwrap(), g.map_latent(&zs[1]).unwrap());
    let avg: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| 0.5 * (a + b)).collect();
    assert!(common::max_abs_diff(&g.map_latent(&mid).unwrap(), &avg) > 1e-3);
}

#[test]
fn linear_synthesis_is_affine_in_the_state() {
    for family in [LatentSpace::Style, LatentSpace::Skip] {
        let g = generator(family, true);
        for seed in 0..10 {
            let (s1, s2) = (random_state(&g, 2 * seed), random_state(&g, 2 * seed + 1));
            let alpha = 0.1 * seed as f64 - 0.3;
            let mixed = g.synthesize(&blend(&s1, &s2, alpha)).unwrap();
            let (c1, c2) = (g.synthesize(&s1).unwrap(), g.synthesize(&s2).unwrap());
            let combine = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect() };
            assert!(common::max_abs_diff(&mixed.image, &combine(&c1.image, &c2.image)) < 1e-5);
            for i in 0..g.descriptor().layer_count {
                let want = combine(c1.layer(i, Tap::Post), c2.layer(i, Tap::Post));
                assert!(common::max_abs_diff(mixed.layer(i, Tap::Post), &want) < 1e-5);
            }
        }
    }
}

#[test]
fn finite_difference_jacobian_predicts_the_response() {
    for family in [LatentSpace::Style, LatentSpace::Skip] {
        let g = generator(family, true);
        let s = random_state(&g, 40);
        let x0 = flatten(&s);
        let space = s.space();
        let from_flat = |v: &[f64]| {
            let t = layerpca::tensor::TensorBlock::from_f64(s.to_tensor().dims().to_vec(), v).unwrap();
            LayeredLatentState::from_tensor(space, &t).unwrap()
        };
        // Work in f32-representable states so the tensor path loses nothing.
        let base_state = from_flat(&x0);
        let x0 = flatten(&base_state);
        let f0 = g.render(&base_state).unwrap();
        let h = 0.5;
        let mut columns = Vec::with_capacity(x0.len());
        for i in 0..x0.len() {
            let (mut up, mut down) = (x0.clone(), x0.clone());
            up[i] += h;
            down[i] -= h;
            let (fu, fd) = (g.render(&from_flat(&up)).unwrap(), g.render(&from_flat(&down)).unwrap());
            columns.push(fu.iter().zip(&fd).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<f64>>());
        }
        let mut r = common::rng(41);
        let delta: Vec<f64> = (0..x0.len()).map(|_| 0.25 * common::normal(&mut r)).collect();
        let moved: Vec<f64> = x0.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let actual: Vec<f64> = g.render(&from_flat(&moved)).unwrap().iter().zip(&f0).map(|(a, b)| a - b).collect();
        let mut predicted = vec![0.0; f0.len()];
        for (col, d) in columns.iter().zip(&delta) {
            predicted.iter_mut().zip(col).for_each(|(p, c)| *p += d * c);
        }
        let gap = common::max_abs_diff(&actual, &predicted);
        assert!(gap < 1e-4, "{family}: jacobian prediction off by {gap:e}");
    }
}

#[test]
fn latent_means_are_near_zero() {
    let zs = sample_latents(16, 100_000, 3, 0);
    for c in 0..16 {
        let mean = zs.iter().map(|z| z[c]).sum::<f64>() / zs.len() as f64;
        assert!(mean.abs() < 0.02, "coordinate {c} mean {mean}");
    }
}

#[test]
fn latents_are_keyed_by_seed_and_index() {
    let whole = sample_latents(16, 50, 9, 0);
    let tail = sample_latents(16, 20, 9, 30);
    assert_eq!(&whole[30..], &tail[..]);
    assert_ne!(sample_latents(16, 1, 9, 0), sample_latents(16, 1, 10, 0));
}

#[test]
fn identical_descriptors_build_identical_generators() {
    for (family, linear) in combos() {
        let (a, b) = (generator(family, linear), generator(family, linear));
        let s = random_state(&a, 3);
        assert_eq!(a.synthesize(&s).unwrap(), b.synthesize(&s).unwrap());
        if family == LatentSpace::Style {
            let zero = vec![0.0; 16];
            assert_eq!(a.map_latent(&zero).unwrap(), b.map_latent(&zero).unwrap());
        }
    }
    let other = ToyGenerator::new(GeneratorDescriptor::toy(LatentSpace::Style, 22)).unwrap();
    let s = random_state(&other, 3);
    assert_ne!(other.render(&s).unwrap(), generator(LatentSpace::Style, false).render(&s).unwrap());
}

#[test]
fn features_stop_at_the_requested_layer_and_agree_with_capture() {
    let g = generator(LatentSpace::Skip, false);
    let s = random_state(&g, 5);
    let full = g.synthesize(&s).unwrap();
    for i in 0..g.descriptor().layer_count {
        for tap in [Tap::Pre, Tap::Post] {
            assert_eq!(g.features(&s, i, tap).unwrap(), full.layer(i, tap));
        }
    }
    assert!(g.features(&s, 6, Tap::Post).is_err());
}

#[test]
fn states_of_the_wrong_shape_are_rejected() {
    let g = generator(LatentSpace::Style, false);
    let skip = LayeredLatentState::fresh(LatentSpace::Skip, vec![0.0; 16], 6).unwrap();
    assert!(g.synthesize(&skip).is_err());
    let short = LayeredLatentState::fresh(LatentSpace::Style, vec![0.0; 16], 5).unwrap();
    assert!(g.synthesize(&short).is_err());
    let narrow = LayeredLatentState::fresh(LatentSpace::Style, vec![0.0; 15], 6).unwrap();
    assert!(g.synthesize(&narrow).is_err());
    assert!(generator(LatentSpace::Skip, false).map_latent(&[0.0; 16]).is_err());
}
