//! Train the default f-VAE on two moons and compare its samples with a
//! moment-matched Gaussian by energy distance.
//!
//! ```text
//! cargo run --release --example two_moons [steps] [samples.csv]
//! ```

use std::time::Instant;

use fvae::data::two_moons;
use fvae::eval::{energy_distance, moment_matched_gaussian};
use fvae::{build_model, fvae_loss, train, ModelConfig, SplitMix64, Tensor, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let out = args.next();

    let data = two_moons(10_000, 0.05, 0)?;
    let (train_set, _) = data.split(0)?;
    let held_out = two_moons(2048, 0.05, 1)?;

    let mut model = build_model(&ModelConfig::default())?;
    let x = held_out.points.clone();
    let u = Tensor::new(vec![x.rows(), 2], SplitMix64::new(2).gaussian_vec(2 * x.rows()))?;
    let before = fvae_loss(&model, &x, &u)?.total;

    let cfg = TrainConfig {
        steps,
        log_every: 250,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let history = train(&mut model, &train_set, &cfg)?;
    for (i, l) in history.iter().enumerate() {
        println!("step {:>5}  loss {:>8.4}", i * cfg.log_every, l.total);
    }
    let after = fvae_loss(&model, &x, &u)?.total;
    println!("trained {steps} steps in {:.1}s", start.elapsed().as_secs_f64());
    println!("held-out loss {before:.4} -> {after:.4}");
    println!("sigma2 {:.4}, sigma1 {:.4}", model.sigma2(), model.cf.sigma1().unwrap_or(f64::NAN));

    let samples = model.sample(2048, 1.0, &mut SplitMix64::new(3))?;
    let baseline = moment_matched_gaussian(&train_set, 2048, &mut SplitMix64::new(4))?;
    println!(
        "energy distance: model {:.5}, gaussian baseline {:.5}",
        energy_distance(&samples, &held_out.points)?,
        energy_distance(&baseline, &held_out.points)?
    );

    if let Some(path) = out {
        let mut w = csv::Writer::from_path(&path)?;
        for i in 0..samples.rows() {
            w.write_record(samples.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        println!("wrote {path}");
    }
    Ok(())
}
