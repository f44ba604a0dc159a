//! Variational autoencoders whose posterior is a conditional normalizing
//! flow, with exact reductions to a plain VAE and to a plain flow.
//!
//! Everything runs on a small tape-based reverse-mode autodiff in `f64`.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod conditional;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod train;
pub mod verify;

pub use autodiff::{Tape, Tensor, Var};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conditional::{ConditionalFlow, PosteriorForm, PosteriorSpec};
pub use data::Dataset;
pub use error::{Error, Result};
pub use flow::{CouplingMode, CouplingSpec, FlowStack};
pub use model::{build_model, FvaeModel, Mode, ModelConfig};
pub use objectives::{fvae_loss, LossBreakdown};
pub use rng::SplitMix64;
pub use train::{train, TrainConfig};
