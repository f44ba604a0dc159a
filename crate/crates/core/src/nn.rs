//! Dense layers and residual multilayer perceptrons.

use crate::autodiff::{Result, Tape, Tensor, Var};
use crate::rng::SplitMix64;

/// Anything that owns trainable tensors, visited in a fixed order.
pub trait Parameterized {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn param_count<P: Parameterized + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit_params("", &mut |_, t| n += t.numel());
    n
}

/// Overwrite every trainable tensor with `N(0, scale²)` draws.
pub fn jitter_params<P: Parameterized + ?Sized>(p: &mut P, rng: &mut SplitMix64, scale: f64) {
    p.visit_params_mut("", &mut |_, t| {
        if t.requires_grad {
            t.data_mut().iter_mut().for_each(|v| *v = scale * rng.gaussian());
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `N(0, 1/fan_in)` weights.
    Scaled,
    Zero,
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(input: usize, output: usize, init: Init, rng: &mut SplitMix64) -> Self {
        let std = 1.0 / (input as f64).sqrt();
        let w: Vec<f64> = match init {
            Init::Scaled => (0..input * output).map(|_| std * rng.gaussian()).collect(),
            Init::Zero => vec![0.0; input * output],
        };
        Self {
            weight: Tensor::param(vec![input, output], w).expect("dense weight"),
            bias: Tensor::param(vec![output], vec![0.0; output]).expect("dense bias"),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(tape.param(&self.weight))?.add_row(tape.param(&self.bias))
    }
}

impl Parameterized for Dense {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "w"), &self.weight);
        f(&join(prefix, "b"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "w"), &mut self.weight);
        f(&join(prefix, "b"), &mut self.bias);
    }
}

/// `h + outer(relu(inner(h)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub inner: Dense,
    pub outer: Dense,
}

impl ResBlock {
    pub fn new(width: usize, rng: &mut SplitMix64) -> Self {
        Self {
            inner: Dense::new(width, width, Init::Scaled, rng),
            outer: Dense::new(width, width, Init::Scaled, rng),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, h: Var<'t>) -> Result<Var<'t>> {
        let branch = self.outer.forward(tape, self.inner.forward(tape, h)?.relu())?;
        h.add(branch)
    }
}

impl Parameterized for ResBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.inner.visit_params(&join(prefix, "inner"), f);
        self.outer.visit_params(&join(prefix, "outer"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.inner.visit_params_mut(&join(prefix, "inner"), f);
        self.outer.visit_params_mut(&join(prefix, "outer"), f);
    }
}

/// Input projection, a stack of residual blocks, then a linear read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct ResMlp {
    pub input: Dense,
    pub blocks: Vec<ResBlock>,
    pub output: Dense,
}

impl ResMlp {
    pub fn new(
        input: usize,
        hidden: usize,
        output: usize,
        blocks: usize,
        output_init: Init,
        rng: &mut SplitMix64,
    ) -> Self {
        let input_layer = Dense::new(input, hidden, Init::Scaled, rng);
        let blocks = (0..blocks).map(|_| ResBlock::new(hidden, rng)).collect();
        let output_layer = Dense::new(hidden, output, output_init, rng);
        Self {
            input: input_layer,
            blocks,
            output: output_layer,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = self.input.forward(tape, x)?;
        for b in &self.blocks {
            h = b.forward(tape, h)?;
        }
        self.output.forward(tape, h)
    }
}

impl Parameterized for ResMlp {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.input.visit_params(&join(prefix, "in"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.output.visit_params(&join(prefix, "out"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.input.visit_params_mut(&join(prefix, "in"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.output.visit_params_mut(&join(prefix, "out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_output_gives_zero() {
        let mut rng = SplitMix64::new(1);
        let net = ResMlp::new(3, 8, 2, 2, Init::Zero, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![4, 3], 0.7));
        let y = net.forward(&tape, x).unwrap();
        assert_eq!(y.shape(), vec![4, 2]);
        assert!(y.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_names_are_unique_and_ordered() {
        let mut rng = SplitMix64::new(1);
        let net = ResMlp::new(3, 8, 2, 1, Init::Scaled, &mut rng);
        let mut names = Vec::new();
        net.visit_params("enc", &mut |n, _| names.push(n.to_string()));
        assert_eq!(
            names,
            [
                "enc.in.w",
                "enc.in.b",
                "enc.block0.inner.w",
                "enc.block0.inner.b",
                "enc.block0.outer.w",
                "enc.block0.outer.b",
                "enc.out.w",
                "enc.out.b"
            ]
        );
        assert_eq!(param_count(&net), 3 * 8 + 8 + 2 * (64 + 8) + 16 + 2);
    }

    #[test]
    fn same_seed_same_init() {
        let a = ResMlp::new(4, 6, 4, 2, Init::Scaled, &mut SplitMix64::new(9));
        let b = ResMlp::new(4, 6, 4, 2, Init::Scaled, &mut SplitMix64::new(9));
        assert_eq!(a, b);
    }
}
