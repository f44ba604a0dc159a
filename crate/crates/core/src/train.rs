//! Minibatch training with Adam.

use crate::autodiff::{Tape, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::FvaeModel;
use crate::nn::Parameterized;
use crate::objectives::{fvae_loss_tape, LossBreakdown};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Invoke the checkpoint callback every this many steps; 0 disables it.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 256,
            steps: 2000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            checkpoint_every: 0,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }
}

/// Adam moment estimates, one pair per trainable tensor in visit order.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Apply one update using the `grad` buffers on the parameters.
    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let mut k = 0;
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        params.visit_params_mut("", &mut |_, t| {
            if !t.requires_grad {
                return;
            }
            let Some(g) = t.grad.take() else { return };
            if m_all.len() <= k {
                m_all.push(vec![0.0; g.len()]);
                v_all.push(vec![0.0; g.len()]);
            }
            let (m, v) = (&mut m_all[k], &mut v_all[k]);
            for (i, w) in t.data_mut().iter_mut().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                *w -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            }
            k += 1;
        });
    }
}

/// Draws minibatches as consecutive slices of per-epoch shuffles.
#[derive(Debug, Clone)]
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: SplitMix64,
}

impl Batcher {
    pub fn new(n: usize, rng: SplitMix64) -> Self {
        let mut b = Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        for i in (1..self.order.len()).rev() {
            let j = self.rng.below(i + 1);
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    pub fn next_indices(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

pub(crate) fn gather_rows(points: &Tensor, idx: &[usize]) -> Tensor {
    let d = points.cols();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(points.row(i));
    }
    Tensor::new(vec![idx.len(), d], data).expect("non-empty batch")
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { term, .. } => Error::NonFinite { term, step: Some(step) },
        other => other,
    }
}

/// One gradient evaluation and update. Returns the loss of the batch before
/// the update.
pub fn train_step(model: &mut FvaeModel, opt: &mut Adam, x: &Tensor, u: &Tensor, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let (loss, grads) = {
        let tape = Tape::new();
        let terms = fvae_loss_tape(&tape, model, tape.constant(x.clone()), tape.constant(u.clone()))?;
        (terms.row(0), tape.backward(terms.total)?)
    };
    let mut bad = None;
    model.visit_params_mut("", &mut |name, t| {
        if !t.requires_grad {
            return;
        }
        let g = grads.of(t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        if bad.is_none() && g.iter().any(|v| !v.is_finite()) {
            bad = Some(format!("gradient of {name}"));
        }
        t.grad = Some(g);
    });
    if let Some(term) = bad {
        return Err(Error::non_finite(term));
    }
    opt.step(model, cfg);
    Ok(loss)
}

/// Train for `cfg.steps` steps. The history holds the loss at every step
/// divisible by `log_every`, so its first entry is the untrained loss.
pub fn train(model: &mut FvaeModel, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<LossBreakdown>> {
    train_with(model, data, cfg, |_, _| Ok(()))
}

/// As [`train`], calling `on_checkpoint(step, model)` after every
/// `checkpoint_every` completed steps.
pub fn train_with<F>(model: &mut FvaeModel, data: &Dataset, cfg: &TrainConfig, mut on_checkpoint: F) -> Result<Vec<LossBreakdown>>
where
    F: FnMut(usize, &FvaeModel) -> Result<()>,
{
    cfg.validate()?;
    if data.dim != model.data_dim() {
        return Err(Error::Width {
            expected: model.data_dim(),
            got: data.dim,
        });
    }
    let mut root = SplitMix64::new(cfg.seed);
    let mut batcher = Batcher::new(data.len(), root.split());
    let mut noise = root.split();
    let mut opt = Adam::new();
    let d = model.latent_dim();
    let mut history = Vec::with_capacity(cfg.steps.div_ceil(cfg.log_every));

    for step in 0..cfg.steps {
        let x = gather_rows(&data.points, &batcher.next_indices(cfg.batch_size));
        let u = Tensor::new(vec![cfg.batch_size, d], noise.gaussian_vec(cfg.batch_size * d))?;
        let loss = train_step(model, &mut opt, &x, &u, cfg).map_err(|e| at_step(e, step))?;
        if step % cfg.log_every == 0 {
            history.push(loss);
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(step + 1, model)?;
        }
    }
    Ok(history)
}
