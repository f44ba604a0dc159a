//! Sample a trained two-moons model at several temperatures. Variance grows
//! with T and T = 0 collapses every sample onto `G(F⁻¹(0))`.

use fvae::data::two_moons;
use fvae::{build_model, train, ModelConfig, SplitMix64, TrainConfig};

fn main() -> fvae::Result<()> {
    let data = two_moons(5000, 0.05, 0)?;
    let mut model = build_model(&ModelConfig::default())?;
    train(
        &mut model,
        &data,
        &TrainConfig {
            steps: 600,
            ..TrainConfig::default()
        },
    )?;

    for t in [0.0, 0.25, 0.5, 0.8, 1.0] {
        let s = model.sample(4096, t, &mut SplitMix64::new(7))?;
        let n = s.rows() as f64;
        let mut line = format!("T = {t:<4}");
        for c in 0..2 {
            let mean = (0..s.rows()).map(|i| s.row(i)[c]).sum::<f64>() / n;
            let var = (0..s.rows()).map(|i| (s.row(i)[c] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            line += &format!("  var[{c}] {var:.5}");
        }
        println!("{line}");
    }
    Ok(())
}
