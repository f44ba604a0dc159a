//! The full model: conditional-flow posterior, decoder and the decoder scale
//! σ₂, plus sampling, reconstruction, interpolation and likelihood estimates.

use crate::autodiff::{Tape, Tensor, Var};
use crate::conditional::{ConditionalFlow, Posterior, PosteriorForm, PosteriorSpec};
use crate::error::{Error, Result};
use crate::flow::{CouplingMode, CouplingSpec};
use crate::nn::{join, Init, Parameterized, ResMlp};
use crate::objectives::fvae_terms_tape;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `F(σ₁u + E(x))` posterior with a learned decoder.
    Fvae,
    /// Diagonal Gaussian posterior: a plain VAE.
    VaeReduction,
    /// `F(σu + x)` posterior with the identity decoder and fixed σ₂ = σ:
    /// a plain flow trained on noised inputs.
    FlowReduction,
    /// Two flows interleaved with three data-dependent affine maps.
    Hybrid,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Fvae, Mode::VaeReduction, Mode::FlowReduction, Mode::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Fvae => "fvae",
            Mode::VaeReduction => "vae-reduction",
            Mode::FlowReduction => "flow-reduction",
            Mode::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn form(self) -> PosteriorForm {
        match self {
            Mode::Fvae => PosteriorForm::Combined,
            Mode::VaeReduction => PosteriorForm::GaussianReparam,
            Mode::FlowReduction => PosteriorForm::NoisyFlow,
            Mode::Hybrid => PosteriorForm::Hybrid,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Mode::Fvae => 0,
            Mode::VaeReduction => 1,
            Mode::FlowReduction => 2,
            Mode::Hybrid => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.code() == c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    pub data_dim: usize,
    /// Defaults to `data_dim`.
    pub latent_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub flow_layers: usize,
    pub coupling_hidden: usize,
    pub coupling_blocks: usize,
    pub coupling: CouplingMode,
    pub log_scale_clamp: f64,
    pub split_index: Option<usize>,
    /// σ of the flow-reduction posterior (also its fixed σ₂).
    pub noise_sigma: f64,
    /// Starting values of the trainable scales σ₁ (combined form) and σ₂.
    pub init_sigma1: f64,
    pub init_sigma2: f64,
    pub decoder_tanh: bool,
    pub seed: u64,
    /// Side length when the data are square grayscale images.
    pub image_side: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Fvae,
            data_dim: 2,
            latent_dim: 2,
            hidden: 64,
            blocks: 2,
            flow_layers: 4,
            coupling_hidden: 64,
            coupling_blocks: 1,
            coupling: CouplingMode::Affine,
            log_scale_clamp: 2.0,
            split_index: None,
            noise_sigma: 0.05,
            init_sigma1: 0.1,
            init_sigma2: 0.1,
            decoder_tanh: false,
            seed: 0,
            image_side: None,
        }
    }
}

impl ModelConfig {
    pub fn with_dims(data_dim: usize) -> Self {
        Self {
            data_dim,
            latent_dim: data_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("data_dim", self.data_dim),
            ("latent_dim", self.latent_dim),
            ("hidden", self.hidden),
            ("coupling_hidden", self.coupling_hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.mode == Mode::FlowReduction && self.latent_dim != self.data_dim {
            return Err(Error::config(
                "latent_dim",
                format!(
                    "flow-reduction needs latent_dim == data_dim ({} != {})",
                    self.latent_dim, self.data_dim
                ),
            ));
        }
        for (field, v) in [
            ("noise_sigma", self.noise_sigma),
            ("init_sigma1", self.init_sigma1),
            ("init_sigma2", self.init_sigma2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.log_scale_clamp > 0.0) {
            return Err(Error::config("log_scale_clamp", "must be positive"));
        }
        if let Some(side) = self.image_side {
            if side * side != self.data_dim {
                return Err(Error::config(
                    "image_side",
                    format!("{side}x{side} images do not have data_dim = {}", self.data_dim),
                ));
            }
        }
        Ok(())
    }

    fn posterior_spec(&self) -> PosteriorSpec {
        PosteriorSpec {
            hidden: self.hidden,
            blocks: self.blocks,
            flow_layers: self.flow_layers,
            coupling: CouplingSpec {
                hidden: self.coupling_hidden,
                blocks: self.coupling_blocks,
                mode: self.coupling,
                log_scale_clamp: self.log_scale_clamp,
                split: self.split_index,
            },
            noise_sigma: self.noise_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    Identity,
    Network { net: ResMlp, tanh: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvaeModel {
    config: ModelConfig,
    pub cf: ConditionalFlow,
    pub decoder: Decoder,
    /// `log σ₂`, shape `[1, 1]`; not trainable in flow-reduction mode.
    pub log_sigma2: Tensor,
}

/// Deterministic construction from the config and its seed. Coupling and
/// decoder read-outs start at zero: the initial flow is the identity and the
/// initial decoder outputs zeros.
pub fn build_model(config: &ModelConfig) -> Result<FvaeModel> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let mut cf = ConditionalFlow::new(
        config.mode.form(),
        config.data_dim,
        config.latent_dim,
        &config.posterior_spec(),
        &mut rng,
    )?;
    let (decoder, log_sigma2) = match config.mode {
        Mode::FlowReduction => (
            Decoder::Identity,
            Tensor::new(vec![1, 1], vec![config.noise_sigma.ln()]).expect("scalar"),
        ),
        _ => (
            Decoder::Network {
                net: ResMlp::new(
                    config.latent_dim,
                    config.hidden,
                    config.data_dim,
                    config.blocks,
                    Init::Zero,
                    &mut rng,
                ),
                tanh: config.decoder_tanh,
            },
            Tensor::param(vec![1, 1], vec![config.init_sigma2.ln()]).expect("scalar"),
        ),
    };
    if let Posterior::Combined { log_sigma1, .. } = &mut cf.posterior {
        log_sigma1.data_mut()[0] = config.init_sigma1.ln();
    }
    Ok(FvaeModel {
        config: config.clone(),
        cf,
        decoder,
        log_sigma2,
    })
}

impl FvaeModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.item().exp()
    }

    pub fn log_sigma2_var<'t>(&self, tape: &'t Tape) -> Var<'t> {
        tape.param(&self.log_sigma2)
    }

    /// Decoder mean `G(h)`.
    pub fn decode_tape<'t>(&self, tape: &'t Tape, h: Var<'t>) -> Result<Var<'t>> {
        match &self.decoder {
            Decoder::Identity => Ok(h),
            Decoder::Network { net, tanh } => {
                let y = net.forward(tape, h)?;
                Ok(if *tanh { y.tanh() } else { y })
            }
        }
    }

    fn check_data(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.data_dim() {
            return Err(Error::Width {
                expected: self.data_dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Map prior-space latents to data space: `G(F⁻¹(z))`.
    pub fn decode_latent(&self, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let h = self.cf.decoder_input_tape(&tape, tape.constant(z.clone()))?;
        Ok(self.decode_tape(&tape, h)?.to_tensor())
    }

    /// `n` draws: `u ~ N(0, T² I)`, `x = G(F⁻¹(u))`. Returns decoder means.
    pub fn sample(&self, n: usize, temperature: f64, rng: &mut SplitMix64) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        if !(temperature >= 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {temperature} must be >= 0")));
        }
        let d = self.latent_dim();
        let z: Vec<f64> = (0..n * d).map(|_| temperature * rng.gaussian()).collect();
        self.decode_latent(&Tensor::new(vec![n, d], z)?)
    }

    /// The noise-free code `F_x(0)`, e.g. `F(E(x))` for the combined form.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_data(x)?;
        let tape = Tape::new();
        Ok(self.cf.code_tape(&tape, tape.constant(x.clone()))?.to_tensor())
    }

    /// Decoder mean along the `u = 0` path. For the combined form this is
    /// `G(E(x))`: `F` cancels against `F⁻¹` and is not evaluated.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.check_data(x)?;
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let u = tape.zeros(vec![x.rows(), self.latent_dim()]);
        let draw = self.cf.forward_tape(&tape, xv, u)?;
        Ok(self.decode_tape(&tape, draw.decoder_input)?.to_tensor())
    }

    /// Linear path between the codes of `x_a` and `x_b`, decoded at `steps`
    /// evenly spaced points including both ends.
    pub fn interpolate(&self, x_a: &[f64], x_b: &[f64], steps: usize) -> Result<Tensor> {
        if steps < 2 {
            return Err(Error::InvalidArgument("interpolation needs at least 2 steps".into()));
        }
        let codes = self.encode(&Tensor::from_rows(&[x_a.to_vec(), x_b.to_vec()])?)?;
        let (a, b) = (codes.row(0), codes.row(1));
        let mut path = Vec::with_capacity(steps);
        for i in 0..steps {
            let t = i as f64 / (steps - 1) as f64;
            path.push(a.iter().zip(b).map(|(p, q)| (1.0 - t) * p + t * q).collect());
        }
        self.decode_latent(&Tensor::from_rows(&path)?)
    }

    /// Bilinear interpolation between four corner codes; returns `steps²`
    /// rows in row-major order with `corners[0]` top-left, `corners[1]`
    /// top-right, `corners[2]` bottom-left, `corners[3]` bottom-right.
    pub fn interpolate_grid(&self, corners: [&[f64]; 4], steps: usize) -> Result<Tensor> {
        if steps < 2 {
            return Err(Error::InvalidArgument("interpolation needs at least 2 steps".into()));
        }
        let rows: Vec<Vec<f64>> = corners.iter().map(|c| c.to_vec()).collect();
        let codes = self.encode(&Tensor::from_rows(&rows)?)?;
        let d = codes.cols();
        let mut grid = Vec::with_capacity(steps * steps);
        for r in 0..steps {
            let t = r as f64 / (steps - 1) as f64;
            for c in 0..steps {
                let s = c as f64 / (steps - 1) as f64;
                let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t];
                grid.push((0..d).map(|j| (0..4).map(|k| w[k] * codes.row(k)[j]).sum()).collect());
            }
        }
        self.decode_latent(&Tensor::from_rows(&grid)?)
    }

    /// Importance-sampled `log q(x)` with `k` posterior draws:
    /// `log (1/k) Σ exp[log q(x|z) + log q(z) − log p(z|x)]`.
    pub fn estimate_log_likelihood(&self, x: &[f64], k: usize, rng: &mut SplitMix64) -> Result<f64> {
        Ok(self.estimate_log_likelihood_batch(&Tensor::repeat_row(x, 1), k, rng)?[0])
    }

    /// [`estimate_log_likelihood`](Self::estimate_log_likelihood) for every
    /// row of `x`, drawing `k` base samples per row in row order.
    pub fn estimate_log_likelihood_batch(&self, x: &Tensor, k: usize, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        self.check_data(x)?;
        let n = x.rows();
        let d = self.latent_dim();
        let mut rows = Vec::with_capacity(n * k * self.data_dim());
        for i in 0..n {
            for _ in 0..k {
                rows.extend_from_slice(x.row(i));
            }
        }
        let xs = Tensor::new(vec![n * k, self.data_dim()], rows)?;
        let u = Tensor::new(vec![n * k, d], rng.gaussian_vec(n * k * d))?;
        let tape = Tape::new();
        let terms = fvae_terms_tape(&tape, self, tape.constant(xs), tape.constant(u))?;
        // log w = −(per-datum loss), all normalizing constants included.
        let total = terms.total.value();
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in total.chunks(k).enumerate() {
            let max = chunk.iter().map(|v| -v).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY || max.is_nan() {
                return Err(Error::non_finite(format!("importance weights of row {i}")));
            }
            let sum: f64 = chunk.iter().map(|v| (-v - max).exp()).sum();
            out.push(max + (sum / k as f64).ln());
        }
        Ok(out)
    }
}

impl Parameterized for FvaeModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.cf.visit_params(&join(prefix, "cf"), f);
        if let Decoder::Network { net, .. } = &self.decoder {
            net.visit_params(&join(prefix, "dec"), f);
        }
        f(&join(prefix, "log_sigma2"), &self.log_sigma2);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.cf.visit_params_mut(&join(prefix, "cf"), f);
        if let Decoder::Network { net, .. } = &mut self.decoder {
            net.visit_params_mut(&join(prefix, "dec"), f);
        }
        f(&join(prefix, "log_sigma2"), &mut self.log_sigma2);
    }
}
