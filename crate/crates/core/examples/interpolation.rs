//! Linear and four-corner interpolation between real shapes in the
//! Gaussianized code space.

use fvae::cli::pgm_grid;
use fvae::data::shapes;
use fvae::{build_model, train, ModelConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = shapes(5000, 8, 3)?;
    let mut model = build_model(&ModelConfig::with_dims(64))?;
    train(
        &mut model,
        &data,
        &TrainConfig {
            steps: 1500,
            ..TrainConfig::default()
        },
    )?;

    let line = model.interpolate(data.row(0), data.row(1), 8)?;
    std::fs::write("interpolation_line.pgm", pgm_grid(&line.clamp_tiles(), 8))?;

    let grid = model.interpolate_grid([data.row(2), data.row(3), data.row(4), data.row(5)], 6)?;
    std::fs::write("interpolation_grid.pgm", pgm_grid(&grid.clamp_tiles(), 8))?;
    println!("wrote interpolation_line.pgm (8 tiles) and interpolation_grid.pgm (6x6 tiles)");
    Ok(())
}

trait ClampTiles {
    fn clamp_tiles(self) -> Self;
}

impl ClampTiles for fvae::Tensor {
    fn clamp_tiles(mut self) -> Self {
        self.data_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        self
    }
}
