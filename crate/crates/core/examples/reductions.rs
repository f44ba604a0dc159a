//! The two special cases of the conditional-flow posterior.
//!
//! A Gaussian posterior turns the KL part of the loss into the usual VAE KL,
//! and a fixed noisy flow turns the whole loss into the NLL of a flow trained
//! on noised inputs.

use fvae::conditional::Posterior;
use fvae::nn::jitter_params;
use fvae::objectives::{flow_nll, flow_reduction_gap, fvae_loss, kl_gaussian, per_sample_losses};
use fvae::verify::fixed_gaussian_posterior;
use fvae::{build_model, Mode, ModelConfig, SplitMix64, Tensor};

fn main() -> fvae::Result<()> {
    let mut rng = SplitMix64::new(5);

    let mu = [0.8, -0.3, 1.1];
    let sigma = [0.5, 1.4, 0.9];
    let vae = fixed_gaussian_posterior(&mu, &sigma, 0)?;
    let n = 200_000;
    let x = Tensor::repeat_row(&[0.0; 3], n);
    let u = Tensor::new(vec![n, 3], rng.gaussian_vec(3 * n))?;
    let kl: Vec<f64> = per_sample_losses(&vae, &x, &u)?.iter().map(|l| l.kl_part()).collect();
    let mean = kl.iter().sum::<f64>() / n as f64;
    let se = (kl.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 * (n as f64 - 1.0))).sqrt();
    println!("gaussian posterior: Monte Carlo KL {mean:.5} +- {se:.5}, closed form {:.5}", kl_gaussian(&mu, &sigma)?);

    let mut flow_model = build_model(&ModelConfig {
        mode: Mode::FlowReduction,
        data_dim: 3,
        latent_dim: 3,
        noise_sigma: 0.1,
        ..ModelConfig::default()
    })?;
    jitter_params(&mut flow_model, &mut rng, 0.1);
    let x = Tensor::new(vec![4, 3], rng.gaussian_vec(12))?;
    let u = Tensor::new(vec![4, 3], rng.gaussian_vec(12))?;
    let Posterior::NoisyFlow { flow, noise_sigma } = &flow_model.cf.posterior else {
        unreachable!()
    };
    let f = fvae_loss(&flow_model, &x, &u)?.total;
    let nll = flow_nll(flow, &x, &u, *noise_sigma)?;
    println!("noisy flow, tied scales: f-VAE loss {f:.10}, flow NLL {nll:.10}");

    // Untie the decoder scale: the loss now differs by a known amount.
    flow_model.log_sigma2.data_mut()[0] = 0.3f64.ln();
    let f = fvae_loss(&flow_model, &x, &u)?.total;
    let gap = (0..4).map(|i| flow_reduction_gap(u.row(i), *noise_sigma, 0.3)).sum::<f64>() / 4.0;
    println!("noisy flow, sigma2 = 0.3: loss - nll = {:.10}, predicted {gap:.10}", f - nll);
    Ok(())
}
