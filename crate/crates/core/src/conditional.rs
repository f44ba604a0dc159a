//! Conditional flows `z = F_x(u)`: bijections in `u` whose parameters depend
//! on the data point `x`. Pushing `u ~ N(0, I)` through `F_x` defines the
//! posterior `p(z|x)`, with density `q(u) / |det ∂F_x/∂u|` at `u = F_x⁻¹(z)`.
//!
//! Four forms are provided:
//!
//! | form              | map                                              |
//! |-------------------|--------------------------------------------------|
//! | `GaussianReparam` | `σ(x) ⊙ u + μ(x)`                                |
//! | `NoisyFlow`       | `F(σ u + x)`, σ a fixed constant                 |
//! | `Combined`        | `F(σ₁ u + E(x))`, σ₁ a trainable scalar          |
//! | `Hybrid`          | `σ₃ ⊙ F₂(σ₂ ⊙ F₁(σ₁ ⊙ u + μ₁) + μ₂) + μ₃`, all `σᵢ, μᵢ` functions of `x` |

use std::f64::consts::PI;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::{CouplingSpec, FlowStack};
use crate::nn::{join, Dense, Init, Parameterized, ResMlp};
use crate::rng::SplitMix64;

const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorForm {
    GaussianReparam,
    NoisyFlow,
    Combined,
    Hybrid,
}

impl PosteriorForm {
    pub const ALL: [PosteriorForm; 4] = [
        PosteriorForm::GaussianReparam,
        PosteriorForm::NoisyFlow,
        PosteriorForm::Combined,
        PosteriorForm::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PosteriorForm::GaussianReparam => "gaussian-reparam",
            PosteriorForm::NoisyFlow => "noisy-flow",
            PosteriorForm::Combined => "combined",
            PosteriorForm::Hybrid => "hybrid",
        }
    }
}

/// Architecture of the posterior networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSpec {
    pub hidden: usize,
    pub blocks: usize,
    pub flow_layers: usize,
    pub coupling: CouplingSpec,
    /// Fixed σ of the noisy-flow form.
    pub noise_sigma: f64,
}

impl Default for PosteriorSpec {
    fn default() -> Self {
        Self {
            hidden: 64,
            blocks: 2,
            flow_layers: 4,
            coupling: CouplingSpec::default(),
            noise_sigma: 0.05,
        }
    }
}

/// `μ(h)` and `σ(h) = softplus(raw(h)) + 1e-6`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineHead {
    pub mu: Dense,
    pub sigma: Dense,
}

impl AffineHead {
    /// Starts with `σ ≡ 1`.
    fn new(input: usize, latent: usize, rng: &mut SplitMix64) -> Self {
        let mu = Dense::new(input, latent, Init::Scaled, rng);
        let mut sigma = Dense::new(input, latent, Init::Zero, rng);
        let raw = inverse_softplus(1.0 - SIGMA_FLOOR);
        sigma.bias.data_mut().iter_mut().for_each(|b| *b = raw);
        Self { mu, sigma }
    }

    /// Returns `(μ, log σ)`.
    fn forward<'t>(&self, tape: &'t Tape, h: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let mu = self.mu.forward(tape, h)?;
        let raw = self.sigma.forward(tape, h)?;
        let sigma = raw.exp().add_const(1.0)?.log()?.add_const(SIGMA_FLOOR)?;
        Ok((mu, sigma.log()?))
    }
}

impl Parameterized for AffineHead {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.mu.visit_params(&join(prefix, "mu"), f);
        self.sigma.visit_params(&join(prefix, "sigma"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.mu.visit_params_mut(&join(prefix, "mu"), f);
        self.sigma.visit_params_mut(&join(prefix, "sigma"), f);
    }
}

/// `raw` such that `softplus(raw) = y`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    GaussianReparam {
        trunk: ResMlp,
        head: AffineHead,
    },
    NoisyFlow {
        flow: FlowStack,
        noise_sigma: f64,
    },
    Combined {
        encoder: ResMlp,
        flow: FlowStack,
        log_sigma1: Tensor,
    },
    Hybrid {
        trunk: ResMlp,
        heads: [AffineHead; 3],
        flow1: FlowStack,
        flow2: FlowStack,
    },
}

/// One posterior draw recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorDraw<'t> {
    pub z: Var<'t>,
    /// `log|det ∂z/∂u|` per row, shape `[n, 1]`.
    pub logdet: Var<'t>,
    /// What the decoder network consumes: `F⁻¹(z)` for the flow-topped
    /// forms (available here without inverting), `z` otherwise.
    pub decoder_input: Var<'t>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFlow {
    data_dim: usize,
    latent_dim: usize,
    pub posterior: Posterior,
}

fn affine<'t>(u: Var<'t>, mu: Var<'t>, log_sigma: Var<'t>) -> Result<Var<'t>> {
    Ok(u.mul(log_sigma.exp())?.add(mu)?)
}

fn affine_inverse<'t>(z: Var<'t>, mu: Var<'t>, log_sigma: Var<'t>) -> Result<Var<'t>> {
    Ok(z.sub(mu)?.mul(log_sigma.scale(-1.0).exp())?)
}

impl ConditionalFlow {
    pub fn new(
        form: PosteriorForm,
        data_dim: usize,
        latent_dim: usize,
        spec: &PosteriorSpec,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::config("data_dim", "must be positive"));
        }
        if latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be positive"));
        }
        let flow = |rng: &mut SplitMix64| -> Result<FlowStack> {
            if spec.flow_layers > 0 && latent_dim < 2 {
                return Err(Error::config(
                    "latent_dim",
                    "coupling flows need at least 2 latent features",
                ));
            }
            FlowStack::new(latent_dim, spec.flow_layers, &spec.coupling, rng)
        };
        let posterior = match form {
            PosteriorForm::GaussianReparam => {
                let trunk = ResMlp::new(data_dim, spec.hidden, spec.hidden, spec.blocks, Init::Scaled, rng);
                let head = AffineHead::new(spec.hidden, latent_dim, rng);
                Posterior::GaussianReparam { trunk, head }
            }
            PosteriorForm::NoisyFlow => {
                if latent_dim != data_dim {
                    return Err(Error::config(
                        "latent_dim",
                        format!("noisy-flow needs latent_dim == data_dim ({latent_dim} != {data_dim})"),
                    ));
                }
                if !(spec.noise_sigma > 0.0) {
                    return Err(Error::config("noise_sigma", "must be positive"));
                }
                Posterior::NoisyFlow {
                    flow: flow(rng)?,
                    noise_sigma: spec.noise_sigma,
                }
            }
            PosteriorForm::Combined => {
                let encoder = ResMlp::new(data_dim, spec.hidden, latent_dim, spec.blocks, Init::Scaled, rng);
                Posterior::Combined {
                    encoder,
                    flow: flow(rng)?,
                    log_sigma1: Tensor::param(vec![1, 1], vec![0.0]).expect("scalar"),
                }
            }
            PosteriorForm::Hybrid => {
                let trunk = ResMlp::new(data_dim, spec.hidden, spec.hidden, spec.blocks, Init::Scaled, rng);
                let heads = [
                    AffineHead::new(spec.hidden, latent_dim, rng),
                    AffineHead::new(spec.hidden, latent_dim, rng),
                    AffineHead::new(spec.hidden, latent_dim, rng),
                ];
                let flow1 = flow(rng)?;
                let flow2 = flow(rng)?;
                Posterior::Hybrid {
                    trunk,
                    heads,
                    flow1,
                    flow2,
                }
            }
        };
        Ok(Self {
            data_dim,
            latent_dim,
            posterior,
        })
    }

    pub fn form(&self) -> PosteriorForm {
        match self.posterior {
            Posterior::GaussianReparam { .. } => PosteriorForm::GaussianReparam,
            Posterior::NoisyFlow { .. } => PosteriorForm::NoisyFlow,
            Posterior::Combined { .. } => PosteriorForm::Combined,
            Posterior::Hybrid { .. } => PosteriorForm::Hybrid,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// σ₁ of the combined form, the fixed σ of the noisy-flow form.
    pub fn sigma1(&self) -> Option<f64> {
        match &self.posterior {
            Posterior::Combined { log_sigma1, .. } => Some(log_sigma1.item().exp()),
            Posterior::NoisyFlow { noise_sigma, .. } => Some(*noise_sigma),
            _ => None,
        }
    }

    /// The unconditional flow `F` topping the combined and noisy-flow forms.
    pub fn flow(&self) -> Option<&FlowStack> {
        match &self.posterior {
            Posterior::Combined { flow, .. } | Posterior::NoisyFlow { flow, .. } => Some(flow),
            _ => None,
        }
    }

    pub fn flow_mut(&mut self) -> Option<&mut FlowStack> {
        match &mut self.posterior {
            Posterior::Combined { flow, .. } | Posterior::NoisyFlow { flow, .. } => Some(flow),
            _ => None,
        }
    }

    fn check(&self, x: Var<'_>, latent: Var<'_>) -> Result<()> {
        if x.cols() != self.data_dim {
            return Err(Error::Width {
                expected: self.data_dim,
                got: x.cols(),
            });
        }
        if latent.cols() != self.latent_dim {
            return Err(Error::Width {
                expected: self.latent_dim,
                got: latent.cols(),
            });
        }
        if x.rows() != latent.rows() {
            return Err(Error::InvalidArgument(format!(
                "x has {} rows but the latent batch has {}",
                x.rows(),
                latent.rows()
            )));
        }
        Ok(())
    }

    /// `z = F_x(u)` together with `log|det ∂z/∂u|`.
    pub fn forward_tape<'t>(&self, tape: &'t Tape, x: Var<'t>, u: Var<'t>) -> Result<PosteriorDraw<'t>> {
        self.check(x, u)?;
        let n = u.rows();
        let d = self.latent_dim as f64;
        match &self.posterior {
            Posterior::GaussianReparam { trunk, head } => {
                let (mu, log_sigma) = head.forward(tape, trunk.forward(tape, x)?)?;
                let z = affine(u, mu, log_sigma)?;
                Ok(PosteriorDraw {
                    z,
                    logdet: log_sigma.sum_rows()?,
                    decoder_input: z,
                })
            }
            Posterior::NoisyFlow { flow, noise_sigma } => {
                let v = u.scale(*noise_sigma).add(x)?;
                let (z, ld) = flow.forward_tape(tape, v)?;
                Ok(PosteriorDraw {
                    z,
                    logdet: ld.add_const(d * noise_sigma.ln())?,
                    decoder_input: v,
                })
            }
            Posterior::Combined {
                encoder,
                flow,
                log_sigma1,
            } => {
                let ls = tape.param(log_sigma1);
                let v = u.mul_scalar(ls.exp())?.add(encoder.forward(tape, x)?)?;
                let (z, ld) = flow.forward_tape(tape, v)?;
                let logdet = ld.add(ls.scale(d).broadcast_scalar(n, 1)?)?;
                Ok(PosteriorDraw {
                    z,
                    logdet,
                    decoder_input: v,
                })
            }
            Posterior::Hybrid {
                trunk,
                heads,
                flow1,
                flow2,
            } => {
                let h = trunk.forward(tape, x)?;
                let (mu1, ls1) = heads[0].forward(tape, h)?;
                let (mu2, ls2) = heads[1].forward(tape, h)?;
                let (mu3, ls3) = heads[2].forward(tape, h)?;
                let (f1, ld1) = flow1.forward_tape(tape, affine(u, mu1, ls1)?)?;
                let (f2, ld2) = flow2.forward_tape(tape, affine(f1, mu2, ls2)?)?;
                let z = affine(f2, mu3, ls3)?;
                let logdet = ls1
                    .sum_rows()?
                    .add(ld1)?
                    .add(ls2.sum_rows()?)?
                    .add(ld2)?
                    .add(ls3.sum_rows()?)?;
                Ok(PosteriorDraw {
                    z,
                    logdet,
                    decoder_input: z,
                })
            }
        }
    }

    /// `u = F_x⁻¹(z)`.
    pub fn inverse_tape<'t>(&self, tape: &'t Tape, x: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        self.check(x, z)?;
        match &self.posterior {
            Posterior::GaussianReparam { trunk, head } => {
                let (mu, log_sigma) = head.forward(tape, trunk.forward(tape, x)?)?;
                affine_inverse(z, mu, log_sigma)
            }
            Posterior::NoisyFlow { flow, noise_sigma } => {
                let v = flow.inverse_tape(tape, z)?;
                Ok(v.sub(x)?.scale(1.0 / noise_sigma))
            }
            Posterior::Combined {
                encoder,
                flow,
                log_sigma1,
            } => {
                let ls = tape.param(log_sigma1);
                let v = flow.inverse_tape(tape, z)?;
                Ok(v.sub(encoder.forward(tape, x)?)?.mul_scalar(ls.scale(-1.0).exp())?)
            }
            Posterior::Hybrid {
                trunk,
                heads,
                flow1,
                flow2,
            } => {
                let h = trunk.forward(tape, x)?;
                let (mu1, ls1) = heads[0].forward(tape, h)?;
                let (mu2, ls2) = heads[1].forward(tape, h)?;
                let (mu3, ls3) = heads[2].forward(tape, h)?;
                let f2 = affine_inverse(z, mu3, ls3)?;
                let f1 = affine_inverse(flow2.inverse_tape(tape, f2)?, mu2, ls2)?;
                affine_inverse(flow1.inverse_tape(tape, f1)?, mu1, ls1)
            }
        }
    }

    /// Map a prior-space latent to what the decoder consumes (`F⁻¹(z)` for
    /// flow-topped forms).
    pub fn decoder_input_tape<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>> {
        match self.flow() {
            Some(flow) => flow.inverse_tape(tape, z),
            None => Ok(z),
        }
    }

    /// The noise-free code `F_x(0)`.
    pub fn code_tape<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let u = tape.zeros(vec![x.rows(), self.latent_dim]);
        Ok(self.forward_tape(tape, x, u)?.z)
    }

    pub fn forward(&self, x: &Tensor, u: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let tape = Tape::new();
        let draw = self.forward_tape(&tape, tape.constant(x.clone()), tape.constant(u.clone()))?;
        Ok((draw.z.to_tensor(), draw.logdet.value()))
    }

    pub fn inverse(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(self
            .inverse_tape(&tape, tape.constant(x.clone()), tape.constant(z.clone()))?
            .to_tensor())
    }

    /// `(μ(x), σ(x))` of the Gaussian-posterior form.
    pub fn gaussian_parameters(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let Posterior::GaussianReparam { trunk, head } = &self.posterior else {
            return Err(Error::WrongMode {
                op: "gaussian_parameters",
                mode: self.form().name().to_string(),
            });
        };
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        if xv.cols() != self.data_dim {
            return Err(Error::Width {
                expected: self.data_dim,
                got: xv.cols(),
            });
        }
        let (mu, log_sigma) = head.forward(&tape, trunk.forward(&tape, xv)?)?;
        Ok((mu.to_tensor(), log_sigma.exp().to_tensor()))
    }

    /// `log p(z|x)` for each aligned row pair.
    pub fn posterior_log_density_batch(&self, x: &Tensor, z: &Tensor) -> Result<Vec<f64>> {
        let u = self.inverse(x, z)?;
        let (_, logdet) = self.forward(x, &u)?;
        let d = self.latent_dim as f64;
        let mut out = Vec::with_capacity(logdet.len());
        for (i, ld) in logdet.iter().enumerate() {
            let sq: f64 = u.row(i).iter().map(|v| v * v).sum();
            let lp = -0.5 * sq - 0.5 * d * (2.0 * PI).ln() - ld;
            if !lp.is_finite() {
                return Err(Error::non_finite(format!("posterior log-density at row {i}")));
            }
            out.push(lp);
        }
        Ok(out)
    }

    pub fn posterior_log_density(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        let xt = Tensor::repeat_row(x, 1);
        let zt = Tensor::repeat_row(z, 1);
        Ok(self.posterior_log_density_batch(&xt, &zt)?[0])
    }
}

impl Parameterized for ConditionalFlow {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match &self.posterior {
            Posterior::GaussianReparam { trunk, head } => {
                trunk.visit_params(&join(prefix, "trunk"), f);
                head.visit_params(&join(prefix, "head"), f);
            }
            Posterior::NoisyFlow { flow, .. } => flow.visit_params(&join(prefix, "flow"), f),
            Posterior::Combined {
                encoder,
                flow,
                log_sigma1,
            } => {
                encoder.visit_params(&join(prefix, "enc"), f);
                flow.visit_params(&join(prefix, "flow"), f);
                f(&join(prefix, "log_sigma1"), log_sigma1);
            }
            Posterior::Hybrid {
                trunk,
                heads,
                flow1,
                flow2,
            } => {
                trunk.visit_params(&join(prefix, "trunk"), f);
                for (i, h) in heads.iter().enumerate() {
                    h.visit_params(&join(prefix, &format!("head{i}")), f);
                }
                flow1.visit_params(&join(prefix, "flow1"), f);
                flow2.visit_params(&join(prefix, "flow2"), f);
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match &mut self.posterior {
            Posterior::GaussianReparam { trunk, head } => {
                trunk.visit_params_mut(&join(prefix, "trunk"), f);
                head.visit_params_mut(&join(prefix, "head"), f);
            }
            Posterior::NoisyFlow { flow, .. } => flow.visit_params_mut(&join(prefix, "flow"), f),
            Posterior::Combined {
                encoder,
                flow,
                log_sigma1,
            } => {
                encoder.visit_params_mut(&join(prefix, "enc"), f);
                flow.visit_params_mut(&join(prefix, "flow"), f);
                f(&join(prefix, "log_sigma1"), log_sigma1);
            }
            Posterior::Hybrid {
                trunk,
                heads,
                flow1,
                flow2,
            } => {
                trunk.visit_params_mut(&join(prefix, "trunk"), f);
                for (i, h) in heads.iter_mut().enumerate() {
                    h.visit_params_mut(&join(prefix, &format!("head{i}")), f);
                }
                flow1.visit_params_mut(&join(prefix, "flow1"), f);
                flow2.visit_params_mut(&join(prefix, "flow2"), f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::jitter_params;

    fn spec() -> PosteriorSpec {
        PosteriorSpec {
            hidden: 8,
            blocks: 1,
            flow_layers: 2,
            coupling: CouplingSpec {
                hidden: 8,
                ..CouplingSpec::default()
            },
            noise_sigma: 0.3,
        }
    }

    fn zero_params<P: Parameterized>(p: &mut P) {
        p.visit_params_mut("", &mut |_, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
    }

    #[test]
    fn inverse_softplus_inverts() {
        for y in [1e-3, 0.5, 1.0, 7.0] {
            let raw: f64 = inverse_softplus(y);
            assert!(((1.0 + raw.exp()).ln() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_gaussian_posterior_is_identity() {
        let mut rng = SplitMix64::new(1);
        let mut cf = ConditionalFlow::new(PosteriorForm::GaussianReparam, 3, 2, &spec(), &mut rng).unwrap();
        if let Posterior::GaussianReparam { head, .. } = &mut cf.posterior {
            zero_params(&mut head.mu);
            head.sigma.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::new(vec![4, 3], rng.gaussian_vec(12)).unwrap();
        let u = Tensor::new(vec![4, 2], rng.gaussian_vec(8)).unwrap();
        let (z, ld) = cf.forward(&x, &u).unwrap();
        assert!(z.max_abs_diff(&u) < 1e-12);
        assert!(ld.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn identity_chain() {
        let mut rng = SplitMix64::new(2);
        let sp = PosteriorSpec {
            flow_layers: 0,
            ..spec()
        };
        let mut cf = ConditionalFlow::new(PosteriorForm::Combined, 2, 2, &sp, &mut rng).unwrap();
        if let Posterior::Combined { encoder, .. } = &mut cf.posterior {
            zero_params(encoder);
        }
        let x = Tensor::new(vec![3, 2], rng.gaussian_vec(6)).unwrap();
        let u = Tensor::new(vec![3, 2], rng.gaussian_vec(6)).unwrap();
        let (z, ld) = cf.forward(&x, &u).unwrap();
        assert_eq!(z, u);
        assert_eq!(ld, vec![0.0; 3]);
        assert_eq!(cf.inverse(&x, &u).unwrap(), u);
        let lp = cf.posterior_log_density(&[0.3, 0.1], &[0.0, 0.0]).unwrap();
        assert!((lp - (1.0 / (2.0 * PI)).ln()).abs() < 1e-12);
        assert!((lp + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn noisy_flow_requires_matching_dims() {
        let mut rng = SplitMix64::new(3);
        let err = ConditionalFlow::new(PosteriorForm::NoisyFlow, 3, 2, &spec(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "latent_dim"));
        assert!(ConditionalFlow::new(PosteriorForm::Combined, 3, 2, &spec(), &mut rng).is_ok());
    }

    #[test]
    fn roundtrip_all_forms() {
        for form in PosteriorForm::ALL {
            let mut rng = SplitMix64::new(7);
            let mut cf = ConditionalFlow::new(form, 4, 4, &spec(), &mut rng).unwrap();
            jitter_params(&mut cf, &mut rng, 0.3);
            let x = Tensor::new(vec![16, 4], rng.gaussian_vec(64)).unwrap();
            let u = Tensor::new(vec![16, 4], rng.gaussian_vec(64)).unwrap();
            let (z, _) = cf.forward(&x, &u).unwrap();
            let back = cf.inverse(&x, &z).unwrap();
            assert!(back.max_abs_diff(&u) < 1e-8, "{}", form.name());
            let (z2, _) = cf.forward(&x, &cf.inverse(&x, &u).unwrap()).unwrap();
            assert!(z2.max_abs_diff(&u) < 1e-8, "{}", form.name());
        }
    }

    #[test]
    fn gaussian_inverse_is_standardization() {
        let mut rng = SplitMix64::new(8);
        let mut cf = ConditionalFlow::new(PosteriorForm::GaussianReparam, 2, 2, &spec(), &mut rng).unwrap();
        jitter_params(&mut cf, &mut rng, 0.5);
        let x = Tensor::new(vec![1, 2], vec![0.4, -0.2]).unwrap();
        let zero = Tensor::zeros(vec![1, 2]);
        let one = Tensor::full(vec![1, 2], 1.0);
        let (mu, _) = cf.forward(&x, &zero).unwrap();
        let (mu_plus_sigma, _) = cf.forward(&x, &one).unwrap();
        let z = Tensor::new(vec![1, 2], vec![1.5, -0.5]).unwrap();
        let u = cf.inverse(&x, &z).unwrap();
        for j in 0..2 {
            let sigma = mu_plus_sigma.data()[j] - mu.data()[j];
            let expected = (z.data()[j] - mu.data()[j]) / sigma;
            assert!((u.data()[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_sigma1_adds_d_log_two() {
        let mut rng = SplitMix64::new(9);
        let sp = PosteriorSpec {
            flow_layers: 0,
            ..spec()
        };
        let mut cf = ConditionalFlow::new(PosteriorForm::Combined, 3, 3, &sp, &mut rng).unwrap();
        let x = Tensor::new(vec![2, 3], rng.gaussian_vec(6)).unwrap();
        let u = Tensor::new(vec![2, 3], rng.gaussian_vec(6)).unwrap();
        let (_, ld1) = cf.forward(&x, &u).unwrap();
        if let Posterior::Combined { log_sigma1, .. } = &mut cf.posterior {
            log_sigma1.data_mut()[0] += 2f64.ln();
        }
        let (_, ld2) = cf.forward(&x, &u).unwrap();
        for (a, b) in ld1.iter().zip(&ld2) {
            assert!((b - a - 3.0 * 2f64.ln()).abs() < 1e-12);
        }
    }
}
