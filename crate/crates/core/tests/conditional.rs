mod common;

use common::{fd_jacobian, log_abs_det, log_normal, rel_err};
use fvae::nn::jitter_params;
use fvae::verify::fixed_gaussian_posterior;
use fvae::{ConditionalFlow, CouplingSpec, PosteriorForm, PosteriorSpec, SplitMix64, Tensor};
use proptest::prelude::*;

fn random_conditional(form: PosteriorForm, d: usize, seed: u64) -> ConditionalFlow {
    let mut rng = SplitMix64::new(seed);
    let spec = PosteriorSpec {
        hidden: 8,
        blocks: 1,
        flow_layers: 2,
        coupling: CouplingSpec {
            hidden: 8,
            ..CouplingSpec::default()
        },
        noise_sigma: 0.3,
    };
    let mut cf = ConditionalFlow::new(form, d, d, &spec, &mut rng).unwrap();
    jitter_params(&mut cf, &mut rng, 0.2);
    cf
}

#[test]
fn combined_logdet_matches_numeric_jacobian() {
    let cf = random_conditional(PosteriorForm::Combined, 4, 8);
    let mut rng = SplitMix64::new(9);
    for _ in 0..10 {
        let x = Tensor::repeat_row(&rng.gaussian_vec(4), 1);
        let u = rng.gaussian_vec(4);
        let (_, ld) = cf.forward(&x, &Tensor::repeat_row(&u, 1)).unwrap();
        let jac = fd_jacobian(|p| cf.forward(&x, &Tensor::repeat_row(p, 1)).unwrap().0.into_data(), &u, 1e-5);
        assert!(rel_err(ld[0], log_abs_det(jac)) < 1e-5);
    }
}

#[test]
fn gaussian_posterior_density_is_diagonal_normal() {
    let mut rng = SplitMix64::new(10);
    for trial in 0..10 {
        let mu = rng.gaussian_vec(3);
        let sigma: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.2, 3.0)).collect();
        let model = fixed_gaussian_posterior(&mu, &sigma, trial).unwrap();
        let x = rng.gaussian_vec(3);
        let z = rng.gaussian_vec(3);
        let want: f64 = (0..3).map(|i| log_normal(z[i], mu[i], sigma[i])).sum();
        let got = model.cf.posterior_log_density(&x, &z).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_form_is_a_bijection_in_u(form in 0usize..4, d in 2usize..6, seed in any::<u64>()) {
        let cf = random_conditional(PosteriorForm::ALL[form], d, seed);
        let mut rng = SplitMix64::new(seed ^ 3);
        let x = Tensor::new(vec![6, d], rng.gaussian_vec(6 * d)).unwrap();
        let u = Tensor::new(vec![6, d], rng.gaussian_vec(6 * d)).unwrap();
        let (z, _) = cf.forward(&x, &u).unwrap();
        prop_assert!(cf.inverse(&x, &z).unwrap().max_abs_diff(&u) < 1e-8);
        let w = Tensor::new(vec![6, d], rng.gaussian_vec(6 * d)).unwrap();
        let (back, _) = cf.forward(&x, &cf.inverse(&x, &w).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&w) < 1e-8);
    }
}
