//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment, dotted keys group related
//! settings (`train.steps = 2000`). Unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::flow::CouplingMode;
use crate::model::{Mode, ModelConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    TwoMoons,
    GaussianRing,
    Shapes,
    Gaussian,
    /// Read from `data.path`.
    File,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::TwoMoons => "two-moons",
            DataKind::GaussianRing => "gaussian-ring",
            DataKind::Shapes => "shapes",
            DataKind::Gaussian => "gaussian",
            DataKind::File => "file",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            DataKind::TwoMoons,
            DataKind::GaussianRing,
            DataKind::Shapes,
            DataKind::Gaussian,
            DataKind::File,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub kind: DataKind,
    pub n: usize,
    pub seed: u64,
    pub noise: f64,
    pub side: usize,
    pub modes: usize,
    pub radius: f64,
    pub sd: f64,
    pub dim: usize,
    pub path: Option<PathBuf>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            kind: DataKind::TwoMoons,
            n: 10_000,
            seed: 0,
            noise: 0.05,
            side: 8,
            modes: 8,
            radius: 2.0,
            sd: 0.1,
            dim: 2,
            path: None,
        }
    }
}

impl DataSpec {
    pub fn generate(&self) -> Result<Dataset> {
        Ok(match self.kind {
            DataKind::TwoMoons => data::two_moons(self.n, self.noise, self.seed)?,
            DataKind::GaussianRing => data::gaussian_ring(self.n, self.modes, self.radius, self.sd, self.seed)?,
            DataKind::Shapes => data::shapes(self.n, self.side, self.seed)?,
            DataKind::Gaussian => data::standard_gaussian(self.n, self.dim, self.seed)?,
            DataKind::File => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::config("data.path", "required when data.kind = file"))?;
                data::load_dataset(path)?
            }
        })
    }

    /// Feature count without generating the data (`None` for files).
    pub fn dim(&self) -> Option<usize> {
        match self.kind {
            DataKind::TwoMoons | DataKind::GaussianRing => Some(2),
            DataKind::Shapes => Some(self.side * self.side),
            DataKind::Gaussian => Some(self.dim),
            DataKind::File => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSpec,
    /// `data_dim`, `latent_dim` and `image_side` are filled in from the data
    /// by [`RunConfig::model_config`].
    pub model: ModelConfig,
    pub latent_dim: Option<usize>,
    pub train: TrainConfig,
    pub sample_n: usize,
    pub temperature: f64,
    pub eval_k: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSpec::default(),
            model: ModelConfig::default(),
            latent_dim: None,
            train: TrainConfig::default(),
            sample_n: 64,
            temperature: 1.0,
            eval_k: 64,
            output_dir: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "mode",
    "data.kind",
    "data.n",
    "data.seed",
    "data.noise",
    "data.side",
    "data.modes",
    "data.radius",
    "data.sd",
    "data.dim",
    "data.path",
    "model.latent_dim",
    "model.flow_layers",
    "model.hidden",
    "model.blocks",
    "model.coupling",
    "model.coupling_hidden",
    "model.coupling_blocks",
    "model.clamp",
    "model.split",
    "model.noise_sigma",
    "model.init_sigma1",
    "model.init_sigma2",
    "model.decoder_tanh",
    "model.seed",
    "train.steps",
    "train.batch",
    "train.lr",
    "train.seed",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.log_every",
    "train.checkpoint_every",
    "sample.n",
    "sample.temperature",
    "eval.k",
    "output.dir",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got {v:?}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got {line:?}"),
                ));
            };
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<String> {
        std::fs::read_to_string(path)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "mode" => self.model.mode = Mode::parse(v).ok_or_else(|| Error::config(key, format!("unknown mode {v:?}")))?,
            "data.kind" => {
                self.data.kind = DataKind::parse(v).ok_or_else(|| Error::config(key, format!("unknown data kind {v:?}")))?
            }
            "data.n" => self.data.n = num(key, v)?,
            "data.seed" => self.data.seed = num(key, v)?,
            "data.noise" => self.data.noise = num(key, v)?,
            "data.side" => self.data.side = num(key, v)?,
            "data.modes" => self.data.modes = num(key, v)?,
            "data.radius" => self.data.radius = num(key, v)?,
            "data.sd" => self.data.sd = num(key, v)?,
            "data.dim" => self.data.dim = num(key, v)?,
            "data.path" => self.data.path = Some(PathBuf::from(v)),
            "model.latent_dim" => self.latent_dim = Some(num(key, v)?),
            "model.flow_layers" => self.model.flow_layers = num(key, v)?,
            "model.hidden" => {
                self.model.hidden = num(key, v)?;
                self.model.coupling_hidden = self.model.hidden;
            }
            "model.blocks" => self.model.blocks = num(key, v)?,
            "model.coupling" => {
                self.model.coupling = match v {
                    "affine" => CouplingMode::Affine,
                    "additive" => CouplingMode::Additive,
                    _ => return Err(Error::config(key, format!("expected affine or additive, got {v:?}"))),
                }
            }
            "model.coupling_hidden" => self.model.coupling_hidden = num(key, v)?,
            "model.coupling_blocks" => self.model.coupling_blocks = num(key, v)?,
            "model.clamp" => self.model.log_scale_clamp = num(key, v)?,
            "model.split" => self.model.split_index = Some(num(key, v)?),
            "model.noise_sigma" => self.model.noise_sigma = num(key, v)?,
            "model.init_sigma1" => self.model.init_sigma1 = num(key, v)?,
            "model.init_sigma2" => self.model.init_sigma2 = num(key, v)?,
            "model.decoder_tanh" => self.model.decoder_tanh = boolean(key, v)?,
            "model.seed" => self.model.seed = num(key, v)?,
            "train.steps" => self.train.steps = num(key, v)?,
            "train.batch" => self.train.batch_size = num(key, v)?,
            "train.lr" => self.train.learning_rate = num(key, v)?,
            "train.seed" => self.train.seed = num(key, v)?,
            "train.beta1" => self.train.beta1 = num(key, v)?,
            "train.beta2" => self.train.beta2 = num(key, v)?,
            "train.eps" => self.train.eps = num(key, v)?,
            "train.log_every" => self.train.log_every = num(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = num(key, v)?,
            "sample.n" => self.sample_n = num(key, v)?,
            "sample.temperature" => self.temperature = num(key, v)?,
            "eval.k" => self.eval_k = num(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Model configuration for data with `data_dim` features.
    pub fn model_config(&self, data_dim: usize) -> ModelConfig {
        let side = (data_dim as f64).sqrt().round() as usize;
        ModelConfig {
            data_dim,
            latent_dim: self.latent_dim.unwrap_or(data_dim),
            image_side: (self.data.kind == DataKind::Shapes && side * side == data_dim).then_some(side),
            ..self.model.clone()
        }
    }

    /// Every effective setting as `key = value` lines in [`KEYS`] order.
    pub fn canonical(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("mode", m.mode.name().into());
        put("data.kind", d.kind.name().into());
        put("data.n", d.n.to_string());
        put("data.seed", d.seed.to_string());
        put("data.noise", d.noise.to_string());
        put("data.side", d.side.to_string());
        put("data.modes", d.modes.to_string());
        put("data.radius", d.radius.to_string());
        put("data.sd", d.sd.to_string());
        put("data.dim", d.dim.to_string());
        put("data.path", d.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("model.latent_dim", self.latent_dim.map(|v| v.to_string()).unwrap_or_else(|| "auto".into()));
        put("model.flow_layers", m.flow_layers.to_string());
        put("model.hidden", m.hidden.to_string());
        put("model.blocks", m.blocks.to_string());
        put(
            "model.coupling",
            match m.coupling {
                CouplingMode::Affine => "affine",
                CouplingMode::Additive => "additive",
            }
            .into(),
        );
        put("model.coupling_hidden", m.coupling_hidden.to_string());
        put("model.coupling_blocks", m.coupling_blocks.to_string());
        put("model.clamp", m.log_scale_clamp.to_string());
        put("model.split", m.split_index.map(|v| v.to_string()).unwrap_or_else(|| "auto".into()));
        put("model.noise_sigma", m.noise_sigma.to_string());
        put("model.init_sigma1", m.init_sigma1.to_string());
        put("model.init_sigma2", m.init_sigma2.to_string());
        put("model.decoder_tanh", m.decoder_tanh.to_string());
        put("model.seed", m.seed.to_string());
        put("train.steps", t.steps.to_string());
        put("train.batch", t.batch_size.to_string());
        put("train.lr", t.learning_rate.to_string());
        put("train.seed", t.seed.to_string());
        put("train.beta1", t.beta1.to_string());
        put("train.beta2", t.beta2.to_string());
        put("train.eps", t.eps.to_string());
        put("train.log_every", t.log_every.to_string());
        put("train.checkpoint_every", t.checkpoint_every.to_string());
        put("sample.n", self.sample_n.to_string());
        put("sample.temperature", self.temperature.to_string());
        put("eval.k", self.eval_k.to_string());
        put("output.dir", self.output_dir.display().to_string());
        s
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
