//! Train on 8×8 shapes and write originals next to reconstructions.
//!
//! ```text
//! cargo run --release --example shapes_reconstruction [steps] [out.pgm]
//! ```

use std::time::Instant;

use fvae::cli::pgm_grid;
use fvae::data::shapes;
use fvae::{build_model, train, ModelConfig, Tensor, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5000);
    let out = args.next().unwrap_or_else(|| "reconstructions.pgm".into());

    let data = shapes(10_000, 8, 0)?;
    let held_out = shapes(1024, 8, 1)?;
    let mut model = build_model(&ModelConfig::with_dims(64))?;
    let start = Instant::now();
    train(
        &mut model,
        &data,
        &TrainConfig {
            steps,
            ..TrainConfig::default()
        },
    )?;
    println!("trained {steps} steps in {:.0}s", start.elapsed().as_secs_f64());

    let x = &held_out.points;
    let xr = model.reconstruct(x)?;
    let mse = xr.data().iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.numel() as f64;
    println!("reconstruction MSE {mse:.4}, pixel variance {:.4}", held_out.pooled_variance());

    // Alternate original / reconstruction so pairs sit side by side.
    let mut tiles = Vec::new();
    for i in 0..32 {
        tiles.extend_from_slice(x.row(i));
        tiles.extend(xr.row(i).iter().map(|v| v.clamp(-1.0, 1.0)));
    }
    std::fs::write(&out, pgm_grid(&Tensor::new(vec![64, 64], tiles)?, 8))?;
    println!("wrote {out}");
    Ok(())
}
