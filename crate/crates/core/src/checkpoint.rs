//! Versioned binary checkpoints.
//!
//! Layout: `"FVCK"`, version `u16`, entry count `u32`, then per entry the
//! name length `u32`, UTF-8 name, rank `u32`, extents as `u32` and the
//! payload as little-endian `f64`. The model configuration is stored as
//! rank-1 entries named `config.*`; `config.seed` holds the raw seed bits.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::flow::CouplingMode;
use crate::model::{build_model, FvaeModel, Mode, ModelConfig};
use crate::nn::Parameterized;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FVCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes, expected \"FVCK\"")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("checkpoint truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("malformed checkpoint at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("checkpoint has no tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Entries = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

fn config_entries(c: &ModelConfig) -> Vec<(String, f64)> {
    let v = vec![
        ("mode", c.mode.code() as f64),
        ("data_dim", c.data_dim as f64),
        ("latent_dim", c.latent_dim as f64),
        ("hidden", c.hidden as f64),
        ("blocks", c.blocks as f64),
        ("flow_layers", c.flow_layers as f64),
        ("coupling_hidden", c.coupling_hidden as f64),
        ("coupling_blocks", c.coupling_blocks as f64),
        ("additive", (c.coupling == CouplingMode::Additive) as u8 as f64),
        ("log_scale_clamp", c.log_scale_clamp),
        ("split_index", c.split_index.unwrap_or(0) as f64),
        ("noise_sigma", c.noise_sigma),
        ("init_sigma1", c.init_sigma1),
        ("init_sigma2", c.init_sigma2),
        ("decoder_tanh", c.decoder_tanh as u8 as f64),
        ("seed", f64::from_bits(c.seed)),
        ("image_side", c.image_side.unwrap_or(0) as f64),
    ];
    v.into_iter().map(|(k, x)| (format!("config.{k}"), x)).collect()
}

/// SHA-256 of the serialized configuration entries, hex encoded.
pub fn config_hash(c: &ModelConfig) -> String {
    let mut h = Sha256::new();
    for (name, v) in config_entries(c) {
        h.update(name.as_bytes());
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn config_from(entries: &Entries) -> std::result::Result<ModelConfig, CheckpointError> {
    let get = |k: &str| -> std::result::Result<f64, CheckpointError> {
        let name = format!("config.{k}");
        match entries.get(&name) {
            Some((_, d)) if d.len() == 1 => Ok(d[0]),
            Some((s, _)) => Err(CheckpointError::ShapeMismatch {
                name,
                expected: vec![1],
                found: s.clone(),
            }),
            None => Err(CheckpointError::MissingTensor(name)),
        }
    };
    let count = |k: &str| get(k).map(|v| v as usize);
    let opt = |k: &str| count(k).map(|v| (v > 0).then_some(v));
    let mode_code = get("mode")?;
    let mode = Mode::from_code(mode_code as u8).ok_or_else(|| CheckpointError::Malformed {
        offset: 0,
        reason: format!("unknown mode code {mode_code}"),
    })?;
    Ok(ModelConfig {
        mode,
        data_dim: count("data_dim")?,
        latent_dim: count("latent_dim")?,
        hidden: count("hidden")?,
        blocks: count("blocks")?,
        flow_layers: count("flow_layers")?,
        coupling_hidden: count("coupling_hidden")?,
        coupling_blocks: count("coupling_blocks")?,
        coupling: if get("additive")? != 0.0 {
            CouplingMode::Additive
        } else {
            CouplingMode::Affine
        },
        log_scale_clamp: get("log_scale_clamp")?,
        split_index: opt("split_index")?,
        noise_sigma: get("noise_sigma")?,
        init_sigma1: get("init_sigma1")?,
        init_sigma2: get("init_sigma2")?,
        decoder_tanh: get("decoder_tanh")? != 0.0,
        seed: get("seed")?.to_bits(),
        image_side: opt("image_side")?,
    })
}

fn put_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(model: &FvaeModel) -> Vec<u8> {
    let config = config_entries(model.config());
    let mut params = Vec::new();
    model.visit_params("", &mut |name, t| params.push((name.to_string(), t.shape().to_vec(), t.data().to_vec())));

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&((config.len() + params.len()) as u32).to_le_bytes());
    for (name, v) in &config {
        put_entry(&mut out, name, &[1], &[*v]);
    }
    for (name, shape, data) in &params {
        put_entry(&mut out, name, shape, data);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], CheckpointError> {
        let end = self.off.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Truncated { offset: self.bytes.len() });
        };
        let s = &self.bytes[self.off..end];
        self.off = end;
        Ok(s)
    }

    fn u16(&mut self) -> std::result::Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> std::result::Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

fn parse(bytes: &[u8]) -> std::result::Result<Entries, CheckpointError> {
    let mut r = Reader { bytes, off: 0 };
    if bytes.len() >= 4 && &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    r.take(4)?;
    let found = r.u16()?;
    if found != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found });
    }
    let count = r.u32()?;
    let mut entries = Entries::new();
    for _ in 0..count {
        let at = r.off;
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed {
                offset: at,
                reason: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| CheckpointError::Malformed {
                offset: at,
                reason: format!("shape {shape:?} overflows"),
            })?;
        let data = r
            .take(numel)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if entries.insert(name.clone(), (shape, data)).is_some() {
            return Err(CheckpointError::Malformed {
                offset: at,
                reason: format!("duplicate tensor `{name}`"),
            });
        }
    }
    if r.off != bytes.len() {
        return Err(CheckpointError::Malformed {
            offset: r.off,
            reason: "trailing bytes".into(),
        });
    }
    Ok(entries)
}

pub fn from_bytes(bytes: &[u8]) -> Result<FvaeModel> {
    let entries = parse(bytes)?;
    let config = config_from(&entries)?;
    let mut model = build_model(&config)?;
    let mut err = None;
    model.visit_params_mut("", &mut |name, t: &mut Tensor| {
        if err.is_some() {
            return;
        }
        match entries.get(name) {
            None => err = Some(CheckpointError::MissingTensor(name.to_string())),
            Some((shape, _)) if shape.as_slice() != t.shape() => {
                err = Some(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    expected: t.shape().to_vec(),
                    found: shape.clone(),
                })
            }
            Some((_, data)) => t.data_mut().copy_from_slice(data),
        }
    });
    match err {
        Some(e) => Err(e.into()),
        None => Ok(model),
    }
}

pub fn save_checkpoint(model: &FvaeModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(CheckpointError::from)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FvaeModel> {
    let bytes = fs::read(path).map_err(CheckpointError::from)?;
    from_bytes(&bytes)
}
