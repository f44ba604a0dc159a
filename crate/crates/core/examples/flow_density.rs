//! Fit a flow to a ring of Gaussians, check that its exact density integrates
//! to one and write the density as a PGM heat map.

use fvae::data::gaussian_ring;
use fvae::eval::{flow_exact_log_density, grid_integral_2d, GridSpec};
use fvae::{build_model, train, Mode, ModelConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = gaussian_ring(8000, 8, 2.0, 0.2, 0)?;
    let mut model = build_model(&ModelConfig {
        mode: Mode::FlowReduction,
        flow_layers: 8,
        ..ModelConfig::default()
    })?;
    let history = train(
        &mut model,
        &data,
        &TrainConfig {
            steps: 1500,
            log_every: 500,
            ..TrainConfig::default()
        },
    )?;
    for (i, l) in history.iter().enumerate() {
        println!("step {:>4}  nll {:.4}", i * 500, l.total);
    }
    let flow = model.cf.flow().expect("flow-reduction model");
    let grid = GridSpec::square(4.0, 300);
    println!("density mass on [-4, 4]^2: {:.5}", grid_integral_2d(|p| flow_exact_log_density(flow, p), &grid)?);

    let side = 200;
    let fine = GridSpec::square(4.0, side);
    let mut dens = Vec::with_capacity(side * side);
    for j in (0..side).rev() {
        dens.extend(flow_exact_log_density(flow, &fine.row_points(j))?.into_iter().map(f64::exp));
    }
    let peak = dens.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(dens.iter().map(|d| (255.0 * d / peak).round() as u8));
    std::fs::write("flow_density.pgm", out)?;
    println!("wrote flow_density.pgm");
    Ok(())
}
