mod common;

use layerpca::edit::{apply_edit_global, apply_edit_layerwise, randomize_subset, style_mix, truncate};
use layerpca::linalg::Matrix;
use layerpca::toy::Tap;
use layerpca::{
    ComponentCoordinates, EditSpec, GeneratorDescriptor, LatentSpace, LayerRange, LayeredLatentState, PrincipalBasis,
    ToyGenerator,
};
use proptest::prelude::*;

const D: usize = 6;
const L: usize = 5;

fn basis(d: usize, seed: u64) -> PrincipalBasis {
    let q = common::random_orthogonal(d, seed);
    let comps = Matrix::from_fn(d, d, |i, j| q[i][j]);
    let vars: Vec<f64> = (0..d).map(|k| 2.0 / (1.0 + k as f64)).collect();
    PrincipalBasis::new(vec![0.25; d], comps, vars, 1000).unwrap()
}

fn state(space: LatentSpace, seed: u64) -> LayeredLatentState {
    let mut r = common::rng(seed);
    let mut s = LayeredLatentState::fresh(space, (0..D).map(|_| common::normal(&mut r)).collect(), L).unwrap();
    for i in 0..L {
        s = s.with_layer(i, (0..D).map(|_| common::normal(&mut r)).collect()).unwrap();
    }
    s
}

fn range() -> impl Strategy<Value = LayerRange> {
    prop_oneof![
        Just(LayerRange::All),
        (0..L).prop_flat_map(|s| (Just(s), s..L)).prop_map(|(s, e)| LayerRange::span(s, e)),
    ]
}

fn spec(space: LatentSpace) -> impl Strategy<Value = EditSpec> {
    (0..D, range(), -4.0f64..4.0).prop_map(move |(c, r, s)| EditSpec::new("p", c, r, space, s))
}

fn all_vectors(s: &LayeredLatentState) -> Vec<f64> {
    s.base().iter().chain(s.per_layer().iter().flatten()).copied().collect()
}

fn space() -> impl Strategy<Value = LatentSpace> {
    prop_oneof![Just(LatentSpace::Style), Just(LatentSpace::Skip)]
}

proptest! {
    #[test]
    fn edits_commute(space in space(), seed in any::<u64>(), a in spec(LatentSpace::Style), b in spec(LatentSpace::Style)) {
        let (a, b) = (EditSpec { space, ..a }, EditSpec { space, ..b });
        let s = state(space, seed);
        let v = basis(D, seed ^ 1);
        let ab = apply_edit_layerwise(&apply_edit_layerwise(&s, &a, &v, None).unwrap(), &b, &v, None).unwrap();
        let ba = apply_edit_layerwise(&apply_edit_layerwise(&s, &b, &v, None).unwrap(), &a, &v, None).unwrap();
        prop_assert!(common::max_abs_diff(&all_vectors(&ab), &all_vectors(&ba)) < 1e-12);
    }

    #[test]
    fn doubling_sigma_equals_applying_twice(seed in any::<u64>(), e in spec(LatentSpace::Style)) {
        let s = state(LatentSpace::Style, seed);
        let v = basis(D, seed ^ 2);
        let once = apply_edit_layerwise(&s, &e.with_sigma(2.0 * e.sigma), &v, None).unwrap();
        let twice = apply_edit_layerwise(&apply_edit_layerwise(&s, &e, &v, None).unwrap(), &e, &v, None).unwrap();
        prop_assert!(common::max_abs_diff(&all_vectors(&once), &all_vectors(&twice)) < 1e-6);
    }

    #[test]
    fn partial_ranges_touch_only_their_layers(seed in any::<u64>(), e in spec(LatentSpace::Style)) {
        let s = state(LatentSpace::Style, seed);
        let out = apply_edit_layerwise(&s, &e, &basis(D, seed), None).unwrap();
        match e.layers.normalized(L) {
            LayerRange::All => prop_assert!(out.base() != s.base() || e.sigma == 0.0),
            LayerRange::Span { start, end } => {
                prop_assert_eq!(out.base(), s.base());
                for i in (0..start).chain(end + 1..L) {
                    prop_assert_eq!(out.layer(i), s.layer(i));
                }
            }
        }
    }

    #[test]
    fn truncation_composes(seed in any::<u64>(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let s = state(LatentSpace::Style, seed);
        let mean = vec![0.7; D];
        let nested = truncate(&truncate(&s, a, &mean).unwrap(), b, &mean).unwrap();
        let direct = truncate(&s, a * b, &mean).unwrap();
        prop_assert!(common::max_abs_diff(&all_vectors(&nested), &all_vectors(&direct)) < 1e-6);
    }

    #[test]
    fn global_edit_moves_coordinates_by_x(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, D)) {
        let s = state(LatentSpace::Style, seed);
        let v = basis(D, seed ^ 3);
        let out = apply_edit_global(&s, &v, &ComponentCoordinates(x.clone())).unwrap();
        let moved = v.project(out.base()).unwrap();
        let start = v.project(s.base()).unwrap();
        let diff: Vec<f64> = moved.0.iter().zip(&start.0).map(|(a, b)| a - b).collect();
        prop_assert!(common::max_abs_diff(&diff, &x) < 1e-9);
    }
}

#[test]
fn first_three_layers_means_indices_zero_to_two() {
    let s = state(LatentSpace::Style, 4);
    let v = basis(D, 4);
    let out = apply_edit_layerwise(&s, &EditSpec::new("e", 1, LayerRange::span(0, 2), LatentSpace::Style, 1.0), &v, None)
        .unwrap();
    let offset: Vec<f64> = v.component(1).iter().map(|c| c * v.std_dev(1)).collect();
    for i in 0..3 {
        let moved: Vec<f64> = out.layer(i).iter().zip(s.layer(i)).map(|(a, b)| a - b).collect();
        assert!(common::max_abs_diff(&moved, &offset) < 1e-12);
    }
    assert_eq!(&out.per_layer()[3..], &s.per_layer()[3..]);
}

#[test]
fn psi_point_seven_scales_the_deviation() {
    let mean = vec![1.0; D];
    let delta: Vec<f64> = (0..D).map(|i| i as f64 - 2.0).collect();
    let v: Vec<f64> = mean.iter().zip(&delta).map(|(m, d)| m + d).collect();
    let s = LayeredLatentState::fresh(LatentSpace::Style, v, L).unwrap();
    let out = truncate(&s, 0.7, &mean).unwrap();
    let want: Vec<f64> = mean.iter().zip(&delta).map(|(m, d)| m + 0.7 * d).collect();
    assert!(common::max_abs_diff(out.base(), &want) < 1e-15);
    assert!(truncate(&s, 1.5, &mean).is_err());
}

#[test]
fn late_mix_keeps_early_features_of_the_recipient() {
    for family in [LatentSpace::Style, LatentSpace::Skip] {
        let g = ToyGenerator::new(GeneratorDescriptor::toy(family, 8)).unwrap();
        let layers = g.descriptor().layer_count;
        let zs = g.sample_latents(2, 8);
        let (recipient, donor) = (g.initial_state(&zs[0]).unwrap(), g.initial_state(&zs[1]).unwrap());
        for k in 1..layers {
            let mixed = style_mix(&recipient, &donor, k, layers - 1).unwrap();
            let (a, b) = (g.synthesize(&mixed).unwrap(), g.synthesize(&recipient).unwrap());
            for i in 0..k {
                assert_eq!(a.layer(i, Tap::Post), b.layer(i, Tap::Post), "{family} k={k} layer {i}");
            }
            assert_ne!(a.layer(k, Tap::Post), b.layer(k, Tap::Post));
        }
    }
}

#[test]
fn fixing_eight_of_512_components_keeps_their_coordinates() {
    let b = basis(512, 12);
    let mut r = common::rng(13);
    let anchor: Vec<f64> = (0..512).map(|_| common::normal(&mut r)).collect();
    let fixed: Vec<usize> = (0..8).collect();
    let want = b.project(&anchor).unwrap();
    for seed in 0..5 {
        let out = randomize_subset(&b, &anchor, &fixed, seed).unwrap();
        let got = b.project(&out).unwrap();
        assert!(common::max_abs_diff(&got.0[..8], &want.0[..8]) < 1e-4);
        assert!(common::max_abs_diff(&got.0[8..], &want.0[8..]) > 1e-2);
    }
}
