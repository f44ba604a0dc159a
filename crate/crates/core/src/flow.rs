//! Coupling layers, feature reversals and their composition into flows.
//!
//! An affine coupling keeps the first `split` features and transforms the
//! rest:
//!
//! ```text
//! y₁ = x₁
//! y₂ = s(x₁) ⊙ x₂ + t(x₁),      s = exp(c · tanh(raw(x₁)))
//! log|det J| = Σᵢ log sᵢ(x₁)
//! ```
//!
//! and the inverse reads `x₂ = (y₂ − t(y₁)) / s(y₁)`. Additive couplings fix
//! `s ≡ 1`. Consecutive couplings are separated by a reversal of the feature
//! order so that every coordinate is eventually transformed.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{join, Init, Parameterized, ResMlp};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    Affine,
    Additive,
}

/// Hyperparameters shared by every coupling in a stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingSpec {
    pub hidden: usize,
    pub blocks: usize,
    pub mode: CouplingMode,
    pub log_scale_clamp: f64,
    /// Width of the pass-through half; `⌊dim/2⌋` when `None`.
    pub split: Option<usize>,
}

impl Default for CouplingSpec {
    fn default() -> Self {
        Self {
            hidden: 64,
            blocks: 1,
            mode: CouplingMode::Affine,
            log_scale_clamp: 2.0,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    dim: usize,
    split: usize,
    pub scale_net: Option<ResMlp>,
    pub shift_net: ResMlp,
    log_scale_clamp: f64,
}

fn check_width(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Width { expected, got })
    }
}

impl CouplingLayer {
    /// Sub-network read-outs start at zero, so a fresh layer is the identity.
    pub fn new(dim: usize, spec: &CouplingSpec, rng: &mut SplitMix64) -> Result<Self> {
        let split = spec.split.unwrap_or(dim / 2);
        if dim < 2 || split < 1 || split > dim - 1 {
            return Err(Error::config(
                "split_index",
                format!("need 1 <= split <= dim - 1, got split {split} for dim {dim}"),
            ));
        }
        if !(spec.log_scale_clamp > 0.0) {
            return Err(Error::config("log_scale_clamp", "must be positive"));
        }
        let d2 = dim - split;
        let scale_net = match spec.mode {
            CouplingMode::Affine => Some(ResMlp::new(split, spec.hidden, d2, spec.blocks, Init::Zero, rng)),
            CouplingMode::Additive => None,
        };
        let shift_net = ResMlp::new(split, spec.hidden, d2, spec.blocks, Init::Zero, rng);
        Ok(Self {
            dim,
            split,
            scale_net,
            shift_net,
            log_scale_clamp: spec.log_scale_clamp,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split_index(&self) -> usize {
        self.split
    }

    pub fn mode(&self) -> CouplingMode {
        if self.scale_net.is_some() {
            CouplingMode::Affine
        } else {
            CouplingMode::Additive
        }
    }

    pub fn log_scale_clamp(&self) -> f64 {
        self.log_scale_clamp
    }

    /// `log s(h) = c · tanh(raw(h))`, or `None` for additive layers.
    fn log_scale<'t>(&self, tape: &'t Tape, h: Var<'t>) -> Result<Option<Var<'t>>> {
        match &self.scale_net {
            Some(net) => Ok(Some(net.forward(tape, h)?.tanh().scale(self.log_scale_clamp))),
            None => Ok(None),
        }
    }

    /// Returns `(y, logdet)` with `logdet` of shape `[n, 1]`.
    pub fn forward_tape<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        check_width(self.dim, x.cols())?;
        let (x1, x2) = x.split(self.split)?;
        let shift = self.shift_net.forward(tape, x1)?;
        let (y2, logdet) = match self.log_scale(tape, x1)? {
            Some(log_s) => (x2.mul(log_s.exp())?.add(shift)?, log_s.sum_rows()?),
            None => (x2.add(shift)?, tape.zeros(vec![x.rows(), 1])),
        };
        Ok((x1.concat(y2)?, logdet))
    }

    pub fn inverse_tape<'t>(&self, tape: &'t Tape, y: Var<'t>) -> Result<Var<'t>> {
        check_width(self.dim, y.cols())?;
        let (y1, y2) = y.split(self.split)?;
        let shift = self.shift_net.forward(tape, y1)?;
        let centered = y2.sub(shift)?;
        let x2 = match self.log_scale(tape, y1)? {
            Some(log_s) => centered.mul(log_s.scale(-1.0).exp())?,
            None => centered,
        };
        Ok(y1.concat(x2)?)
    }
}

impl Parameterized for CouplingLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(net) = &self.scale_net {
            net.visit_params(&join(prefix, "scale"), f);
        }
        self.shift_net.visit_params(&join(prefix, "shift"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(net) = &mut self.scale_net {
            net.visit_params_mut(&join(prefix, "scale"), f);
        }
        self.shift_net.visit_params_mut(&join(prefix, "shift"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowLayer {
    Coupling(CouplingLayer),
    /// Reverses the feature order; volume preserving and its own inverse.
    Reverse,
}

fn reverse_features<'t>(tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
    let d = x.cols();
    let mut perm = Tensor::zeros(vec![d, d]);
    for i in 0..d {
        perm.data_mut()[i * d + (d - 1 - i)] = 1.0;
    }
    Ok(x.matmul(tape.constant(perm))?)
}

/// An unconditional flow: an ordered composition of invertible layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStack {
    dim: usize,
    layers: Vec<FlowLayer>,
}

impl FlowStack {
    pub fn empty(dim: usize) -> Self {
        Self { dim, layers: Vec::new() }
    }

    /// `couplings` coupling layers with a reversal between each consecutive
    /// pair, plus a final reversal when needed so the stack ends in the input
    /// feature order (a fresh stack is then exactly the identity).
    pub fn new(dim: usize, couplings: usize, spec: &CouplingSpec, rng: &mut SplitMix64) -> Result<Self> {
        let mut layers = Vec::new();
        for i in 0..couplings {
            if i > 0 {
                layers.push(FlowLayer::Reverse);
            }
            layers.push(FlowLayer::Coupling(CouplingLayer::new(dim, spec, rng)?));
        }
        if couplings.is_multiple_of(2) && couplings > 0 {
            layers.push(FlowLayer::Reverse);
        }
        Ok(Self { dim, layers })
    }

    pub fn from_layers(dim: usize, layers: Vec<FlowLayer>) -> Result<Self> {
        for l in &layers {
            if let FlowLayer::Coupling(c) = l {
                check_width(dim, c.dim())?;
            }
        }
        Ok(Self { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[FlowLayer] {
        &self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn num_couplings(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, FlowLayer::Coupling(_))).count()
    }

    pub fn push(&mut self, layer: FlowLayer) -> Result<()> {
        if let FlowLayer::Coupling(c) = &layer {
            check_width(self.dim, c.dim())?;
        }
        self.layers.push(layer);
        Ok(())
    }

    /// `self` followed by `other`.
    pub fn then(mut self, other: FlowStack) -> Result<Self> {
        check_width(self.dim, other.dim)?;
        self.layers.extend(other.layers);
        Ok(self)
    }

    pub fn forward_tape<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        check_width(self.dim, x.cols())?;
        let mut h = x;
        let mut logdet: Option<Var<'t>> = None;
        for layer in &self.layers {
            match layer {
                FlowLayer::Coupling(c) => {
                    let (y, ld) = c.forward_tape(tape, h)?;
                    h = y;
                    logdet = Some(match logdet {
                        Some(acc) => acc.add(ld)?,
                        None => ld,
                    });
                }
                FlowLayer::Reverse => h = reverse_features(tape, h)?,
            }
        }
        let logdet = logdet.unwrap_or_else(|| tape.zeros(vec![x.rows(), 1]));
        Ok((h, logdet))
    }

    pub fn inverse_tape<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>> {
        check_width(self.dim, z.cols())?;
        let mut h = z;
        for layer in self.layers.iter().rev() {
            h = match layer {
                FlowLayer::Coupling(c) => c.inverse_tape(tape, h)?,
                FlowLayer::Reverse => reverse_features(tape, h)?,
            };
        }
        Ok(h)
    }

    /// Forward map on a plain `[n, dim]` batch; returns per-row log-dets.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let tape = Tape::new();
        let (z, ld) = self.forward_tape(&tape, tape.constant(x.clone()))?;
        Ok((z.to_tensor(), ld.value()))
    }

    pub fn inverse(&self, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(self.inverse_tape(&tape, tape.constant(z.clone()))?.to_tensor())
    }
}

impl Parameterized for FlowStack {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            if let FlowLayer::Coupling(c) = l {
                c.visit_params(&join(prefix, &format!("layer{i}")), f);
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let FlowLayer::Coupling(c) = l {
                c.visit_params_mut(&join(prefix, &format!("layer{i}")), f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::jitter_params;

    fn random_batch(rng: &mut SplitMix64, n: usize, d: usize) -> Tensor {
        Tensor::new(vec![n, d], rng.gaussian_vec(n * d)).unwrap()
    }

    fn random_stack(d: usize, couplings: usize, mode: CouplingMode, seed: u64) -> FlowStack {
        let mut rng = SplitMix64::new(seed);
        let spec = CouplingSpec {
            hidden: 8,
            mode,
            ..CouplingSpec::default()
        };
        let mut s = FlowStack::new(d, couplings, &spec, &mut rng).unwrap();
        jitter_params(&mut s, &mut rng, 0.3);
        s
    }

    #[test]
    fn split_index_bounds() {
        let mut rng = SplitMix64::new(0);
        let bad = CouplingSpec {
            split: Some(3),
            ..CouplingSpec::default()
        };
        assert!(CouplingLayer::new(3, &bad, &mut rng).is_err());
        assert!(CouplingLayer::new(1, &CouplingSpec::default(), &mut rng).is_err());
        let ok = CouplingSpec {
            split: Some(1),
            ..CouplingSpec::default()
        };
        assert_eq!(CouplingLayer::new(3, &ok, &mut rng).unwrap().split_index(), 1);
    }

    #[test]
    fn zero_initialized_coupling_is_identity() {
        let mut rng = SplitMix64::new(2);
        let layer = CouplingLayer::new(4, &CouplingSpec::default(), &mut rng).unwrap();
        let x = random_batch(&mut rng, 5, 4);
        let tape = Tape::new();
        let (y, ld) = layer.forward_tape(&tape, tape.constant(x.clone())).unwrap();
        assert_eq!(y.to_tensor(), x);
        assert!(ld.value().iter().all(|&v| v == 0.0));
        let back = layer.inverse_tape(&tape, tape.constant(x.clone())).unwrap();
        assert_eq!(back.to_tensor(), x);
    }

    #[test]
    fn additive_logdet_is_exactly_zero() {
        let s = random_stack(4, 3, CouplingMode::Additive, 5);
        let x = random_batch(&mut SplitMix64::new(6), 7, 4);
        let (_, ld) = s.forward(&x).unwrap();
        assert!(ld.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn additive_inverse_subtracts_shift() {
        let s = random_stack(4, 1, CouplingMode::Additive, 8);
        let FlowLayer::Coupling(layer) = &s.layers()[0] else { panic!() };
        let y = random_batch(&mut SplitMix64::new(9), 3, 4);
        let tape = Tape::new();
        let yv = tape.constant(y.clone());
        let x = layer.inverse_tape(&tape, yv).unwrap().to_tensor();
        let (y1, y2) = yv.split(2).unwrap();
        let t = layer.shift_net.forward(&tape, y1).unwrap();
        let expected = y1.concat(y2.sub(t).unwrap()).unwrap().to_tensor();
        assert_eq!(x, expected);
    }

    #[test]
    fn fixed_log_scale_of_one_gives_logdet_three() {
        // d = 4, split 1 -> three transformed coordinates with log s = 1.
        let mut rng = SplitMix64::new(3);
        let spec = CouplingSpec {
            split: Some(1),
            ..CouplingSpec::default()
        };
        let mut layer = CouplingLayer::new(4, &spec, &mut rng).unwrap();
        let net = layer.scale_net.as_mut().unwrap();
        let raw = (1.0f64 / spec.log_scale_clamp).atanh();
        net.output.bias.data_mut().iter_mut().for_each(|b| *b = raw);
        let x = random_batch(&mut rng, 2, 4);
        let tape = Tape::new();
        let (_, ld) = layer.forward_tape(&tape, tape.constant(x)).unwrap();
        for v in ld.value() {
            assert!((v - 3.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn scales_respect_clamp() {
        let mut rng = SplitMix64::new(4);
        let mut layer = CouplingLayer::new(2, &CouplingSpec::default(), &mut rng).unwrap();
        jitter_params(&mut layer, &mut rng, 50.0);
        let x = random_batch(&mut rng, 32, 2);
        let tape = Tape::new();
        let (_, ld) = layer.forward_tape(&tape, tape.constant(x)).unwrap();
        assert!(ld.value().iter().all(|v| v.abs() <= 2.0 + 1e-12));
    }

    #[test]
    fn width_mismatch_rejected() {
        let s = random_stack(4, 2, CouplingMode::Affine, 1);
        let x = Tensor::zeros(vec![2, 3]);
        assert!(matches!(s.forward(&x), Err(Error::Width { expected: 4, got: 3 })));
    }

    #[test]
    fn empty_stack_is_identity() {
        let s = FlowStack::empty(3);
        let x = random_batch(&mut SplitMix64::new(1), 4, 3);
        let (z, ld) = s.forward(&x).unwrap();
        assert_eq!(z, x);
        assert_eq!(ld, vec![0.0; 4]);
        assert_eq!(s.inverse(&x).unwrap(), x);
    }

    #[test]
    fn reversal_is_an_exact_involution() {
        let s = FlowStack::from_layers(5, vec![FlowLayer::Reverse, FlowLayer::Reverse]).unwrap();
        let x = random_batch(&mut SplitMix64::new(2), 6, 5);
        let (z, _) = s.forward(&x).unwrap();
        assert_eq!(z, x);
        let one = FlowStack::from_layers(5, vec![FlowLayer::Reverse]).unwrap();
        let (r, _) = one.forward(&x).unwrap();
        assert_eq!(r.row(0), &x.row(0).iter().rev().copied().collect::<Vec<_>>()[..]);
    }

    #[test]
    fn roundtrip_small() {
        for d in [2, 16] {
            let s = random_stack(d, 4, CouplingMode::Affine, d as u64);
            let x = random_batch(&mut SplitMix64::new(10), 64, d);
            let (z, _) = s.forward(&x).unwrap();
            assert!(s.inverse(&z).unwrap().max_abs_diff(&x) < 1e-9);
            let back = s.forward(&s.inverse(&x).unwrap()).unwrap().0;
            assert!(back.max_abs_diff(&x) < 1e-9);
        }
    }

    #[test]
    fn composition_is_additive() {
        let a = random_stack(4, 2, CouplingMode::Affine, 31);
        let b = random_stack(4, 3, CouplingMode::Affine, 32);
        let x = random_batch(&mut SplitMix64::new(33), 8, 4);
        let (mid, ld_a) = a.forward(&x).unwrap();
        let (_, ld_b) = b.forward(&mid).unwrap();
        let (_, ld_ab) = a.clone().then(b).unwrap().forward(&x).unwrap();
        for i in 0..8 {
            assert!((ld_a[i] + ld_b[i] - ld_ab[i]).abs() < 1e-12);
        }
    }
}
