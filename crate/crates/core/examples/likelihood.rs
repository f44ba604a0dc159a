//! Importance-sampled log-likelihood of a trained model as the number of
//! posterior draws grows, against the exact density of a flow model trained
//! on the same data.

use fvae::data::gaussian_ring;
use fvae::eval::{bits_per_dim, model_log_density};
use fvae::{build_model, train, Mode, ModelConfig, TrainConfig};

fn main() -> fvae::Result<()> {
    let data = gaussian_ring(8000, 8, 2.0, 0.1, 0)?;
    let (train_set, valid) = data.split(0)?;
    let cfg = TrainConfig {
        steps: 1000,
        ..TrainConfig::default()
    };

    let mut fvae_model = build_model(&ModelConfig::default())?;
    train(&mut fvae_model, &train_set, &cfg)?;
    let mut flow_model = build_model(&ModelConfig {
        mode: Mode::FlowReduction,
        ..ModelConfig::default()
    })?;
    train(&mut flow_model, &train_set, &cfg)?;

    let x = valid.points;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    for k in [1, 4, 16, 64, 256] {
        let ll = mean(model_log_density(&fvae_model, &x, k, 1)?);
        println!("f-VAE  K = {k:>3}: log q(x) {ll:>8.4} nats, {:.4} bits/dim", bits_per_dim(-ll, 2));
    }
    let ll = mean(model_log_density(&flow_model, &x, 1, 1)?);
    println!("flow (exact):  log q(x) {ll:>8.4} nats, {:.4} bits/dim", bits_per_dim(-ll, 2));
    Ok(())
}
