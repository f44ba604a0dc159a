mod common;

use common::{fd_jacobian, log_abs_det, rel_err};
use fvae::nn::jitter_params;
use fvae::{CouplingMode, CouplingSpec, FlowStack, SplitMix64, Tensor};
use proptest::prelude::*;

fn random_flow(d: usize, couplings: usize, mode: CouplingMode, seed: u64) -> FlowStack {
    let mut rng = SplitMix64::new(seed);
    let spec = CouplingSpec {
        hidden: 12,
        mode,
        ..CouplingSpec::default()
    };
    let mut flow = FlowStack::new(d, couplings, &spec, &mut rng).unwrap();
    jitter_params(&mut flow, &mut rng, 0.1);
    flow
}

fn single(x: &[f64]) -> Tensor {
    Tensor::repeat_row(x, 1)
}

#[test]
fn four_layer_logdet_matches_numeric_jacobian() {
    let flow = random_flow(4, 4, CouplingMode::Affine, 3);
    let mut rng = SplitMix64::new(4);
    for _ in 0..10 {
        let x = rng.gaussian_vec(4);
        let (_, ld) = flow.forward(&single(&x)).unwrap();
        let jac = fd_jacobian(|p| flow.forward(&single(p)).unwrap().0.into_data(), &x, 1e-5);
        assert!(rel_err(ld[0], log_abs_det(jac)) < 1e-5);
    }
}

#[test]
fn deep_stack_roundtrip_stays_accurate() {
    let flow = random_flow(16, 16, CouplingMode::Affine, 5);
    let x = Tensor::new(vec![64, 16], SplitMix64::new(6).gaussian_vec(1024)).unwrap();
    let (z, _) = flow.forward(&x).unwrap();
    assert!(flow.inverse(&z).unwrap().max_abs_diff(&x) < 1e-7);
    let back = flow.forward(&flow.inverse(&x).unwrap()).unwrap().0;
    assert!(back.max_abs_diff(&x) < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn roundtrip_in_both_directions(
        d in 2usize..10,
        couplings in 0usize..6,
        additive in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mode = if additive { CouplingMode::Additive } else { CouplingMode::Affine };
        let flow = random_flow(d, couplings, mode, seed);
        let x = Tensor::new(vec![8, d], SplitMix64::new(seed ^ 1).gaussian_vec(8 * d)).unwrap();
        let (z, _) = flow.forward(&x).unwrap();
        prop_assert!(flow.inverse(&z).unwrap().max_abs_diff(&x) < 1e-9);
        prop_assert!(flow.forward(&flow.inverse(&x).unwrap()).unwrap().0.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn inverse_volume_cancels_forward_volume(d in 2usize..6, couplings in 1usize..5, seed in any::<u64>()) {
        let flow = random_flow(d, couplings, CouplingMode::Affine, seed);
        let x = SplitMix64::new(seed ^ 2).gaussian_vec(d);
        let (z, ld) = flow.forward(&single(&x)).unwrap();
        let inv = fd_jacobian(|p| flow.inverse(&single(p)).unwrap().into_data(), z.data(), 1e-5);
        prop_assert!((ld[0] + log_abs_det(inv)).abs() < 1e-6);
    }

    #[test]
    fn additive_stacks_preserve_volume(d in 2usize..8, couplings in 0usize..5, seed in any::<u64>()) {
        let flow = random_flow(d, couplings, CouplingMode::Additive, seed);
        let x = Tensor::new(vec![4, d], SplitMix64::new(seed).gaussian_vec(4 * d)).unwrap();
        prop_assert!(flow.forward(&x).unwrap().1.iter().all(|&v| v == 0.0));
    }
}
