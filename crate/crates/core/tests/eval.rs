mod common;

use common::midpoint_mass;
use fvae::data::standard_gaussian;
use fvae::eval::{bits_per_dim, energy_distance, evaluate, flow_exact_log_density, grid_integral_2d, EvalOptions, GridSpec};
use fvae::nn::jitter_params;
use fvae::{build_model, CouplingSpec, FlowStack, Mode, ModelConfig, SplitMix64, Tensor};
use proptest::prelude::*;

fn rows_tensor(pts: &[[f64; 2]]) -> Tensor {
    Tensor::new(vec![pts.len(), 2], pts.iter().flatten().copied().collect()).unwrap()
}

fn jittered_flow(seed: u64) -> FlowStack {
    let mut rng = SplitMix64::new(seed);
    let mut flow = FlowStack::new(2, 4, &CouplingSpec { hidden: 12, ..CouplingSpec::default() }, &mut rng).unwrap();
    jitter_params(&mut flow, &mut rng, 0.15);
    flow
}

#[test]
fn identity_model_bits_per_dim_is_gaussian_entropy() {
    // Differential entropy of N(0, 1) is ½ log₂(2πe) ≈ 2.047 bits.
    let data = standard_gaussian(20_000, 2, 50).unwrap();
    let m = build_model(&ModelConfig {
        mode: Mode::FlowReduction,
        ..ModelConfig::default()
    })
    .unwrap();
    let opts = EvalOptions {
        energy_n: 256,
        grid_resolution: 100,
        ..EvalOptions::default()
    };
    let report = evaluate(&m, &data, &opts).unwrap();
    let get = |name: &str| report.iter().find(|(k, _)| k == name).unwrap().1;
    let want = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).log2();
    assert!((get("bits_per_dim") - want).abs() < 0.02, "{}", get("bits_per_dim"));
    assert!((get("normalization") - 1.0).abs() < 1e-2);
    assert!((bits_per_dim(2.0 * std::f64::consts::LN_2, 2) - 1.0).abs() < 1e-15);
}

#[test]
fn library_grid_matches_reference_grid() {
    let flow = jittered_flow(51);
    let lib = grid_integral_2d(|p| flow_exact_log_density(&flow, p), &GridSpec::square(6.0, 300)).unwrap();
    let reference = midpoint_mass(|p| flow_exact_log_density(&flow, &rows_tensor(p)).unwrap(), [-6.0, -6.0], [6.0, 6.0], 300);
    assert!((lib - reference).abs() < 1e-12);
    assert!((lib - 1.0).abs() < 1e-2);
    let coarse = grid_integral_2d(|p| flow_exact_log_density(&flow, p), &GridSpec::square(6.0, 150)).unwrap();
    assert!((lib - coarse).abs() < 1e-2);
}

#[test]
fn density_is_base_density_of_the_image_plus_logdet() {
    let flow = jittered_flow(52);
    let x = Tensor::new(vec![16, 2], SplitMix64::new(53).gaussian_vec(32)).unwrap();
    let (z, ld) = flow.forward(&x).unwrap();
    let at_z = flow_exact_log_density(&FlowStack::empty(2), &z).unwrap();
    let at_x = flow_exact_log_density(&flow, &x).unwrap();
    for i in 0..16 {
        assert!((at_x[i] - (at_z[i] + ld[i])).abs() < 1e-12);
    }
}

#[test]
fn far_point_masses_are_twice_their_separation_apart() {
    let a = Tensor::repeat_row(&[0.0, 0.0], 10);
    let b = Tensor::repeat_row(&[3.0, 4.0], 7);
    assert!((energy_distance(&a, &b).unwrap() - 10.0).abs() < 1e-12);
    assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn energy_distance_is_symmetric_and_non_negative(seed in any::<u64>(), n in 2usize..40, m in 2usize..40, shift in -2.0f64..2.0) {
        let mut rng = SplitMix64::new(seed);
        let a = Tensor::new(vec![n, 2], rng.gaussian_vec(2 * n)).unwrap();
        let b = Tensor::new(vec![m, 2], rng.gaussian_vec(2 * m).into_iter().map(|v| v + shift).collect()).unwrap();
        let (ab, ba) = (energy_distance(&a, &b).unwrap(), energy_distance(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
    }
}
