//! Densities, normalization integrals, bits per dimension and two-sample
//! distances.

use std::f64::consts::{LN_2, PI};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::FlowStack;
use crate::model::{FvaeModel, Mode};
use crate::rng::{mix64, SplitMix64};

/// `log N(F(x); 0, I) + log|det ∂F/∂x|` for every row of `x`.
pub fn flow_exact_log_density(flow: &FlowStack, x: &Tensor) -> Result<Vec<f64>> {
    let (z, logdet) = flow.forward(x)?;
    let d = flow.dim() as f64;
    Ok((0..z.rows())
        .map(|i| {
            let sq: f64 = z.row(i).iter().map(|v| v * v).sum();
            -0.5 * sq - 0.5 * d * (2.0 * PI).ln() + logdet[i]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x: (f64, f64),
    pub y: (f64, f64),
    /// Cells per axis.
    pub resolution: usize,
}

impl GridSpec {
    pub fn square(half_width: f64, resolution: usize) -> Self {
        Self {
            x: (-half_width, half_width),
            y: (-half_width, half_width),
            resolution,
        }
    }

    fn cell(&self) -> (f64, f64) {
        let r = self.resolution as f64;
        ((self.x.1 - self.x.0) / r, (self.y.1 - self.y.0) / r)
    }

    /// Cell centers of grid row `j` as a `[resolution, 2]` tensor.
    pub fn row_points(&self, j: usize) -> Tensor {
        let (hx, hy) = self.cell();
        let y = self.y.0 + (j as f64 + 0.5) * hy;
        let mut data = Vec::with_capacity(2 * self.resolution);
        for i in 0..self.resolution {
            data.push(self.x.0 + (i as f64 + 0.5) * hx);
            data.push(y);
        }
        Tensor::new(vec![self.resolution, 2], data).expect("resolution >= 1")
    }
}

/// Midpoint-rule integral of `exp(log_density)` over a 2-D box. The callback
/// receives one grid row of cell centers at a time and may be called from
/// several threads; per-row sums are added in row order.
pub fn grid_integral_2d<F>(log_density: F, grid: &GridSpec) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Vec<f64>> + Sync,
{
    if grid.resolution < 50 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution {} is below 50 cells per axis",
            grid.resolution
        )));
    }
    if !(grid.x.1 > grid.x.0 && grid.y.1 > grid.y.0) {
        return Err(Error::InvalidArgument("grid bounds must be increasing".into()));
    }
    let (hx, hy) = grid.cell();
    let rows: Vec<Result<f64>> = (0..grid.resolution)
        .into_par_iter()
        .map(|j| {
            let pts = grid.row_points(j);
            let lp = log_density(&pts)?;
            let mut s = 0.0;
            for (i, v) in lp.iter().enumerate() {
                let e = v.exp();
                if !e.is_finite() || v.is_nan() {
                    let p = pts.row(i);
                    return Err(Error::non_finite(format!("density at ({}, {})", p[0], p[1])));
                }
                s += e;
            }
            Ok(s)
        })
        .collect();
    let mut total = 0.0;
    for r in rows {
        total += r?;
    }
    Ok(total * hx * hy)
}

pub fn bits_per_dim(total_nll_nats: f64, d: usize) -> f64 {
    total_nll_nats / (d as f64 * LN_2)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

fn mean_pairwise(a: &Tensor, b: &Tensor) -> f64 {
    let sums: Vec<f64> = (0..a.rows())
        .into_par_iter()
        .map(|i| (0..b.rows()).map(|j| dist(a.row(i), b.row(j))).sum())
        .collect();
    sums.iter().sum::<f64>() / (a.rows() * b.rows()) as f64
}

/// `2 E‖A − B‖ − E‖A − A′‖ − E‖B − B′‖` over all pairs (diagonal included).
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::Width {
            expected: a.cols(),
            got: b.cols(),
        });
    }
    let ab = mean_pairwise(a, b);
    Ok(2.0 * ab - mean_pairwise(a, a) - mean_pairwise(b, b))
}

/// Draws from the Gaussian with the data's mean and full covariance.
pub fn moment_matched_gaussian(data: &Dataset, n: usize, rng: &mut SplitMix64) -> Result<Tensor> {
    let d = data.dim;
    let m = data.len();
    let x = DMatrix::from_row_slice(m, d, data.points.data());
    let mean = DVector::from_iterator(d, (0..d).map(|j| x.column(j).mean()));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / m as f64;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("data covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let e = DVector::from_vec(rng.gaussian_vec(d));
        out.extend((&mean + &l * e).iter());
    }
    Ok(Tensor::new(vec![n, d], out)?)
}

/// `log q(x)` per row: exact for flow-reduction models, importance-sampled
/// with `k` draws otherwise. Row `i` draws from a stream seeded by
/// `mix64(seed ^ i)`, so results do not depend on batching.
pub fn model_log_density(model: &FvaeModel, x: &Tensor, k: usize, seed: u64) -> Result<Vec<f64>> {
    if model.mode() == Mode::FlowReduction {
        let flow = model.cf.flow().expect("flow-reduction model has a flow");
        return flow_exact_log_density(flow, x);
    }
    let mut out = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let mut rng = SplitMix64::new(mix64(seed ^ i as u64));
        out.push(model.estimate_log_likelihood(x.row(i), k, &mut rng)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub value: f64,
    pub config_hash: String,
}

pub fn write_report<W: Write>(rows: &[ReportRow], w: W) -> std::io::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["metric", "value", "config_hash"])?;
    for r in rows {
        wr.write_record([r.metric.as_str(), &r.value.to_string(), r.config_hash.as_str()])?;
    }
    wr.flush()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Importance samples per point for non-flow modes.
    pub k: usize,
    /// Model samples and data points used for the energy distance.
    pub energy_n: usize,
    /// Cells per axis of the normalization grid.
    pub grid_resolution: usize,
    pub grid_half_width: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 64,
            energy_n: 2048,
            grid_resolution: 300,
            grid_half_width: 6.0,
            seed: 0,
        }
    }
}

/// Bits per dimension, energy distance to the data and, for 2-D data, the
/// normalization integral of the model density.
pub fn evaluate(model: &FvaeModel, data: &Dataset, opts: &EvalOptions) -> Result<Vec<(String, f64)>> {
    if data.dim != model.data_dim() {
        return Err(Error::Width {
            expected: model.data_dim(),
            got: data.dim,
        });
    }
    let mut out = Vec::new();
    let lp = model_log_density(model, &data.points, opts.k, opts.seed)?;
    let nll = -lp.iter().sum::<f64>() / lp.len() as f64;
    out.push(("nll_nats".to_string(), nll));
    out.push(("bits_per_dim".to_string(), bits_per_dim(nll, data.dim)));

    let n = opts.energy_n.min(data.len());
    let mut rng = SplitMix64::new(opts.seed);
    let samples = model.sample(n, 1.0, &mut rng)?;
    let held: Vec<usize> = (0..n).collect();
    let reference = data.select(&held)?;
    out.push(("energy_distance".to_string(), energy_distance(&samples, &reference.points)?));

    if data.dim == 2 {
        let grid = GridSpec::square(opts.grid_half_width, opts.grid_resolution);
        let mass = grid_integral_2d(|pts| model_log_density(model, pts, opts.k, opts.seed), &grid)?;
        out.push(("normalization".to_string(), mass));
    }
    Ok(out)
}
