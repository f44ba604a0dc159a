//! Training objectives.
//!
//! For a posterior draw `z = F_x(u)` and Gaussian decoder
//! `q(x|z) = N(x; G(F⁻¹(z)), σ₂² I)`, the per-datum loss is
//!
//! ```text
//! ½‖G(v) − x‖²/σ₂²  +  D log σ₂ + (D/2) log 2π      (reconstruction, σ₂ normalization)
//! + ½‖z‖²  − ½‖u‖²                                  (prior, base entropy)
//! − log|det ∂z/∂u|                                   (log-det)
//! ```
//!
//! where `v` is the decoder input (`v = σ₁u + E(x)` for the combined form).
//! The `(d/2) log 2π` terms of `q(z)` and `q(u)` cancel and are omitted; the
//! decoder's normalization is kept so `σ₂` can be trained.

use std::f64::consts::PI;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::FlowStack;
use crate::model::FvaeModel;

/// Batch-averaged value of every loss term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub sigma2_norm: f64,
    pub prior: f64,
    pub base_entropy: f64,
    pub neg_logdet: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const TERMS: [&'static str; 6] = [
        "reconstruction",
        "sigma2_norm",
        "prior",
        "base_entropy",
        "neg_logdet",
        "total",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.reconstruction,
            self.sigma2_norm,
            self.prior,
            self.base_entropy,
            self.neg_logdet,
            self.total,
        ]
    }

    /// Sum of the five terms, which `total` matches up to rounding.
    pub fn sum_of_terms(&self) -> f64 {
        self.reconstruction + self.sigma2_norm + self.prior + self.base_entropy + self.neg_logdet
    }

    /// The KL-like part `prior + base_entropy + neg_logdet`.
    pub fn kl_part(&self) -> f64 {
        self.prior + self.base_entropy + self.neg_logdet
    }

    fn check_finite(&self) -> Result<()> {
        for (name, v) in Self::TERMS.iter().zip(self.values()) {
            if !v.is_finite() {
                return Err(Error::non_finite(*name));
            }
        }
        Ok(())
    }
}

/// Loss terms on a tape; each field has shape `[n, 1]` (per datum) or `[1]`
/// (batch mean), depending on where it came from.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<'t> {
    pub reconstruction: Var<'t>,
    pub sigma2_norm: Var<'t>,
    pub prior: Var<'t>,
    pub base_entropy: Var<'t>,
    pub neg_logdet: Var<'t>,
    pub total: Var<'t>,
}

impl<'t> LossTerms<'t> {
    fn fields(&self) -> [Var<'t>; 6] {
        [
            self.reconstruction,
            self.sigma2_norm,
            self.prior,
            self.base_entropy,
            self.neg_logdet,
            self.total,
        ]
    }

    pub fn mean(&self) -> LossTerms<'t> {
        let [a, b, c, d, e, f] = self.fields().map(Var::mean);
        LossTerms {
            reconstruction: a,
            sigma2_norm: b,
            prior: c,
            base_entropy: d,
            neg_logdet: e,
            total: f,
        }
    }

    /// Values of the `i`-th row.
    pub fn row(&self, i: usize) -> LossBreakdown {
        let [a, b, c, d, e, f] = self.fields().map(|v| v.value()[i]);
        LossBreakdown {
            reconstruction: a,
            sigma2_norm: b,
            prior: c,
            base_entropy: d,
            neg_logdet: e,
            total: f,
        }
    }

    /// Values of every row, reading each term from the tape once.
    pub fn values(&self) -> Vec<LossBreakdown> {
        let [a, b, c, d, e, f] = self.fields().map(|v| v.value());
        (0..f.len())
            .map(|i| LossBreakdown {
                reconstruction: a[i],
                sigma2_norm: b[i],
                prior: c[i],
                base_entropy: d[i],
                neg_logdet: e[i],
                total: f[i],
            })
            .collect()
    }

    pub fn rows(&self) -> usize {
        self.total.rows()
    }
}

/// Per-datum loss terms for aligned batches `x: [n, D]`, `u: [n, d]`.
pub fn fvae_terms_tape<'t>(tape: &'t Tape, model: &FvaeModel, x: Var<'t>, u: Var<'t>) -> Result<LossTerms<'t>> {
    let n = x.rows();
    let data_dim = model.data_dim() as f64;
    let draw = model.cf.forward_tape(tape, x, u)?;
    let decoded = model.decode_tape(tape, draw.decoder_input)?;
    let log_s2 = model.log_sigma2_var(tape);

    let inv_var = log_s2.scale(-2.0).exp();
    let reconstruction = decoded.sub(x)?.square().sum_rows()?.matmul(inv_var)?.scale(0.5);
    let sigma2_norm = log_s2
        .scale(data_dim)
        .broadcast_scalar(n, 1)?
        .add_const(0.5 * data_dim * (2.0 * PI).ln())?;
    let prior = draw.z.square().sum_rows()?.scale(0.5);
    let base_entropy = u.square().sum_rows()?.scale(-0.5);
    let neg_logdet = draw.logdet.scale(-1.0);
    let total = reconstruction
        .add(sigma2_norm)?
        .add(prior)?
        .add(base_entropy)?
        .add(neg_logdet)?;
    Ok(LossTerms {
        reconstruction,
        sigma2_norm,
        prior,
        base_entropy,
        neg_logdet,
        total,
    })
}

/// Batch-mean loss on a tape, ready for [`Tape::backward`] on `.total`.
pub fn fvae_loss_tape<'t>(tape: &'t Tape, model: &FvaeModel, x: Var<'t>, u: Var<'t>) -> Result<LossTerms<'t>> {
    let means = fvae_terms_tape(tape, model, x, u)?.mean();
    means.row(0).check_finite()?;
    Ok(means)
}

/// Single-draw Monte Carlo estimate of the loss, averaged over the batch.
pub fn fvae_loss(model: &FvaeModel, x: &Tensor, u: &Tensor) -> Result<LossBreakdown> {
    let tape = Tape::new();
    let terms = fvae_loss_tape(&tape, model, tape.constant(x.clone()), tape.constant(u.clone()))?;
    Ok(terms.row(0))
}

/// Loss terms for every row separately.
pub fn per_sample_losses(model: &FvaeModel, x: &Tensor, u: &Tensor) -> Result<Vec<LossBreakdown>> {
    let tape = Tape::new();
    let terms = fvae_terms_tape(&tape, model, tape.constant(x.clone()), tape.constant(u.clone()))?;
    Ok(terms.values())
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = Σᵢ ½(μᵢ² + σᵢ² − 1) − log σᵢ`.
pub fn kl_gaussian(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Width {
            expected: mu.len(),
            got: sigma.len(),
        });
    }
    let mut kl = 0.0;
    for (i, (&m, &s)) in mu.iter().zip(sigma).enumerate() {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma[{i}] = {s} must be positive")));
        }
        kl += 0.5 * (m * m + s * s - 1.0) - s.ln();
    }
    Ok(kl)
}

/// Classic VAE objective for a Gaussian-posterior model: single-draw
/// reconstruction (with the σ₂ normalization) plus closed-form KL, averaged
/// over the batch. Its expectation over `u` equals that of [`fvae_loss`]
/// exactly; no constant separates the two.
pub fn vae_elbo_closed(model: &FvaeModel, x: &Tensor, u: &Tensor) -> Result<f64> {
    let (mu, sigma) = model.cf.gaussian_parameters(x)?;
    let tape = Tape::new();
    let z = tape.constant(u.clone()).mul(tape.constant(sigma.clone()))?.add(tape.constant(mu.clone()))?;
    let decoded = model.decode_tape(&tape, z)?.to_tensor();
    let s2 = model.sigma2();
    let data_dim = model.data_dim() as f64;
    let norm = data_dim * s2.ln() + 0.5 * data_dim * (2.0 * PI).ln();
    let n = x.rows();
    let mut total = 0.0;
    for i in 0..n {
        let sq: f64 = decoded.row(i).iter().zip(x.row(i)).map(|(a, b)| (a - b).powi(2)).sum();
        total += 0.5 * sq / (s2 * s2) + norm + kl_gaussian(mu.row(i), sigma.row(i))?;
    }
    Ok(total / n as f64)
}

/// Per-datum negative log-likelihood of the noised input `σu + x` under the
/// flow, `½‖F(v)‖² + (d/2) log 2π − log|det ∂F/∂v|`, shape `[n, 1]`.
pub fn flow_nll_terms_tape<'t>(
    tape: &'t Tape,
    flow: &FlowStack,
    x: Var<'t>,
    u: Var<'t>,
    noise_sigma: f64,
) -> Result<Var<'t>> {
    if !(noise_sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("noise_sigma = {noise_sigma} must be positive")));
    }
    let d = flow.dim() as f64;
    let v = u.scale(noise_sigma).add(x)?;
    let (z, ld) = flow.forward_tape(tape, v)?;
    Ok(z.square().sum_rows()?.scale(0.5).add_const(0.5 * d * (2.0 * PI).ln())?.sub(ld)?)
}

pub fn flow_nll(flow: &FlowStack, x: &Tensor, u: &Tensor, noise_sigma: f64) -> Result<f64> {
    let tape = Tape::new();
    let terms = flow_nll_terms_tape(&tape, flow, tape.constant(x.clone()), tape.constant(u.clone()), noise_sigma)?;
    let v = terms.mean().item();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::non_finite("flow nll"))
    }
}

/// Per-datum gap `fvae_loss − flow_nll` for a noisy-flow model with noise σ₁
/// and decoder scale σ₂, as a function of the base draw `u` only:
/// `½(σ₁²/σ₂² − 1)‖u‖² + d log(σ₂/σ₁)`. Zero when σ₂ = σ₁.
pub fn flow_reduction_gap(u: &[f64], sigma1: f64, sigma2: f64) -> f64 {
    let sq: f64 = u.iter().map(|v| v * v).sum();
    let d = u.len() as f64;
    0.5 * (sigma1 * sigma1 / (sigma2 * sigma2) - 1.0) * sq + d * (sigma2 / sigma1).ln()
}

/// One-dimensional all-Gaussian model used to compare the joint KL with the
/// marginal KL it bounds:
///
/// ```text
/// p̃(x)   = N(data_mean, data_sd²)
/// q(z)   = N(0, 1)
/// q(x|z) = N(dec_slope·z + dec_offset, dec_sd²)
/// p(z|x) = N(post_slope·x + post_offset, post_sd²)
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianToy {
    pub data_mean: f64,
    pub data_sd: f64,
    pub dec_slope: f64,
    pub dec_offset: f64,
    pub dec_sd: f64,
    pub post_slope: f64,
    pub post_offset: f64,
    pub post_sd: f64,
}

impl GaussianToy {
    /// Standard deviation of `q(x) = ∫ q(z) q(x|z) dz`.
    pub fn marginal_sd(&self) -> f64 {
        (self.dec_slope * self.dec_slope + self.dec_sd * self.dec_sd).sqrt()
    }

    /// Replace `p(z|x)` with the exact Bayes posterior of the decoder model.
    pub fn with_exact_posterior(mut self) -> Self {
        let var_x = self.dec_slope * self.dec_slope + self.dec_sd * self.dec_sd;
        self.post_slope = self.dec_slope / var_x;
        self.post_offset = -self.dec_slope * self.dec_offset / var_x;
        self.post_sd = self.dec_sd / var_x.sqrt();
        self
    }
}

/// Midpoint grid used by [`joint_kl_toy`]: each axis spans
/// `center ± half_width · sd` with `points` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyGrid {
    pub half_width: f64,
    pub points: usize,
}

impl Default for ToyGrid {
    fn default() -> Self {
        Self {
            half_width: 10.0,
            points: 400,
        }
    }
}

fn log_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let r = (x - mean) / sd;
    -0.5 * r * r - sd.ln() - 0.5 * (2.0 * PI).ln()
}

const MAX_LEAKAGE: f64 = 1e-4;

/// `(KL(p̃(x)p(z|x) ‖ q(z)q(x|z)), KL(p̃(x) ‖ q(x)))` by grid integration.
pub fn joint_kl_toy(toy: &GaussianToy, grid: &ToyGrid) -> Result<(f64, f64)> {
    for (name, sd) in [("data_sd", toy.data_sd), ("dec_sd", toy.dec_sd), ("post_sd", toy.post_sd)] {
        if !(sd > 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
    }
    if grid.points < 2 || !(grid.half_width > 0.0) {
        return Err(Error::InvalidArgument("grid needs >= 2 points and positive width".into()));
    }
    let axis = |center: f64, sd: f64| -> (Vec<f64>, f64) {
        let lo = center - grid.half_width * sd;
        let h = 2.0 * grid.half_width * sd / grid.points as f64;
        ((0..grid.points).map(|i| lo + (i as f64 + 0.5) * h).collect(), h)
    };
    let (xs, hx) = axis(toy.data_mean, toy.data_sd);
    let marginal_sd = toy.marginal_sd();

    let mut data_mass = 0.0;
    let mut worst_post_mass: f64 = 1.0;
    let mut joint = 0.0;
    let mut marginal = 0.0;
    for &x in &xs {
        let lp_x = log_normal(x, toy.data_mean, toy.data_sd);
        let p_x = lp_x.exp();
        data_mass += p_x * hx;
        marginal += p_x * (lp_x - log_normal(x, toy.dec_offset, marginal_sd)) * hx;

        let (zs, hz) = axis(toy.post_slope * x + toy.post_offset, toy.post_sd);
        let mut inner = 0.0;
        let mut post_mass = 0.0;
        for &z in &zs {
            let lp_z = log_normal(z, toy.post_slope * x + toy.post_offset, toy.post_sd);
            let p_z = lp_z.exp();
            post_mass += p_z * hz;
            let lq = log_normal(z, 0.0, 1.0) + log_normal(x, toy.dec_slope * z + toy.dec_offset, toy.dec_sd);
            inner += p_z * (lp_x + lp_z - lq) * hz;
        }
        worst_post_mass = worst_post_mass.min(post_mass);
        joint += p_x * inner * hx;
    }
    let leak = (1.0 - data_mass).abs().max((1.0 - worst_post_mass).abs());
    if leak > MAX_LEAKAGE {
        return Err(Error::InvalidArgument(format!(
            "grid too narrow: {leak:.3e} of the probability mass falls outside"
        )));
    }
    Ok((joint, marginal))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_gaussian_values() {
        assert_eq!(kl_gaussian(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!((kl_gaussian(&[1.0, 1.0], &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(kl_gaussian(&[0.0], &[0.0]).is_err());
        assert!(kl_gaussian(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn kl_gaussian_doubling_sigma_delta() {
        // Doubling σ changes each coordinate by ½(4σ² − σ²) − log 2.
        let mu = [0.3, -0.1];
        let s = [0.5, 1.2];
        let s2 = [1.0, 2.4];
        let delta = kl_gaussian(&mu, &s2).unwrap() - kl_gaussian(&mu, &s).unwrap();
        let expected: f64 = s.iter().map(|v| 1.5 * v * v - 2f64.ln()).sum();
        assert!((delta - expected).abs() < 1e-12);
    }

    #[test]
    fn flow_nll_empty_flow_at_origin() {
        let flow = FlowStack::empty(2);
        let z = Tensor::zeros(vec![1, 2]);
        let v = flow_nll(&flow, &z, &z, 0.1).unwrap();
        assert!((v - (2.0 * PI).ln()).abs() < 1e-12);
        assert!((v - 1.837877).abs() < 1e-6);
        assert!(flow_nll(&flow, &z, &z, 0.0).is_err());
    }

    #[test]
    fn toy_exact_posterior_is_tight() {
        let toy = GaussianToy {
            data_mean: 0.4,
            data_sd: 1.3,
            dec_slope: 0.8,
            dec_offset: 0.2,
            dec_sd: 0.5,
            post_slope: 0.0,
            post_offset: 0.0,
            post_sd: 1.0,
        }
        .with_exact_posterior();
        let (j, m) = joint_kl_toy(&toy, &ToyGrid::default()).unwrap();
        assert!((j - m).abs() < 1e-4, "{j} {m}");
    }

    #[test]
    fn toy_rejects_narrow_grid() {
        let toy = GaussianToy {
            data_mean: 0.0,
            data_sd: 1.0,
            dec_slope: 1.0,
            dec_offset: 0.0,
            dec_sd: 1.0,
            post_slope: 0.5,
            post_offset: 0.0,
            post_sd: 0.7,
        };
        let narrow = ToyGrid {
            half_width: 2.0,
            points: 100,
        };
        assert!(joint_kl_toy(&toy, &narrow).is_err());
    }

    #[test]
    fn flow_reduction_gap_vanishes_for_tied_scales() {
        assert_eq!(flow_reduction_gap(&[0.3, -1.2], 0.1, 0.1), 0.0);
    }
}
