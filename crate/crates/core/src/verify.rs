//! Self-checks run by `fvae check`: invertibility, log-determinants,
//! gradients, the two reductions and density normalization.

use std::fmt;

use nalgebra::DMatrix;

use crate::autodiff::{grad_check, Tape, Tensor, Var};
use crate::conditional::{inverse_softplus, ConditionalFlow, Posterior, PosteriorForm, PosteriorSpec};
use crate::error::{Error, Result};
use crate::eval::{flow_exact_log_density, grid_integral_2d, GridSpec};
use crate::flow::{CouplingMode, CouplingSpec, FlowStack};
use crate::model::{build_model, FvaeModel, Mode, ModelConfig};
use crate::nn::{jitter_params, Parameterized};
use crate::objectives::{fvae_loss_tape, fvae_terms_tape, flow_nll_terms_tape, flow_reduction_gap, kl_gaussian, per_sample_losses};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Invertibility,
    Logdet,
    Gradients,
    Reductions,
    Normalization,
    All,
}

impl Scope {
    pub const SUITES: [Scope; 5] = [
        Scope::Invertibility,
        Scope::Logdet,
        Scope::Gradients,
        Scope::Reductions,
        Scope::Normalization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Invertibility => "invertibility",
            Scope::Logdet => "logdet",
            Scope::Gradients => "gradients",
            Scope::Reductions => "reductions",
            Scope::Normalization => "normalization",
            Scope::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Scope> {
        Scope::SUITES.into_iter().chain([Scope::All]).find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    /// Worst observed error (or statistic) for this check.
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value < self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: max error {:.3e} (tolerance {:.0e})",
            if self.passed() { "ok" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Scope,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

pub fn run(scope: Scope) -> Result<Vec<SuiteReport>> {
    let suites: Vec<Scope> = match scope {
        Scope::All => Scope::SUITES.to_vec(),
        s => vec![s],
    };
    suites
        .into_iter()
        .map(|s| {
            let checks = match s {
                Scope::Invertibility => invertibility()?,
                Scope::Logdet => logdet()?,
                Scope::Gradients => gradients()?,
                Scope::Reductions => reductions()?,
                Scope::Normalization => normalization()?,
                Scope::All => unreachable!(),
            };
            Ok(SuiteReport { suite: s, checks })
        })
        .collect()
}

fn small_spec(mode: CouplingMode) -> CouplingSpec {
    CouplingSpec {
        hidden: 16,
        mode,
        ..CouplingSpec::default()
    }
}

fn random_flow(d: usize, layers: usize, mode: CouplingMode, rng: &mut SplitMix64) -> Result<FlowStack> {
    let mut flow = FlowStack::new(d, layers, &small_spec(mode), rng)?;
    jitter_params(&mut flow, rng, 0.05);
    Ok(flow)
}

fn random_conditional(form: PosteriorForm, d: usize, rng: &mut SplitMix64) -> Result<ConditionalFlow> {
    let spec = PosteriorSpec {
        hidden: 8,
        blocks: 1,
        flow_layers: 2,
        coupling: small_spec(CouplingMode::Affine),
        noise_sigma: 0.5,
    };
    let mut cf = ConditionalFlow::new(form, d, d, &spec, rng)?;
    jitter_params(&mut cf, rng, 0.1);
    Ok(cf)
}

fn gaussian(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor {
    Tensor::new(vec![rows, cols], rng.gaussian_vec(rows * cols)).expect("non-empty")
}

fn invertibility() -> Result<Vec<Check>> {
    let mut rng = SplitMix64::new(101);
    let mut out = Vec::new();
    for d in [2, 16, 64] {
        for layers in [1, 4, 16] {
            let flow = random_flow(d, layers, CouplingMode::Affine, &mut rng)?;
            let x = gaussian(64, d, &mut rng);
            let (z, _) = flow.forward(&x)?;
            let err = flow.inverse(&z)?.max_abs_diff(&x);
            out.push(Check {
                name: format!("flow d={d} couplings={layers}"),
                value: err,
                tolerance: if layers >= 16 { 1e-7 } else { 1e-9 },
            });
        }
    }
    for form in PosteriorForm::ALL {
        let cf = random_conditional(form, 4, &mut rng)?;
        let x = gaussian(64, 4, &mut rng);
        let u = gaussian(64, 4, &mut rng);
        let (z, _) = cf.forward(&x, &u)?;
        out.push(Check {
            name: format!("conditional {}", form.name()),
            value: cf.inverse(&x, &z)?.max_abs_diff(&u),
            tolerance: 1e-9,
        });
    }
    Ok(out)
}

/// `log|det J|` of `f` at `at`, with `J` from central differences.
pub fn fd_log_abs_det<F>(f: F, at: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let d = at.len();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut p = at.to_vec();
        p[j] += step;
        let mut m = at.to_vec();
        m[j] -= step;
        let (fp, fm) = (f(&p)?, f(&m)?);
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    Ok(jac.determinant().abs().ln())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn logdet() -> Result<Vec<Check>> {
    let mut rng = SplitMix64::new(202);
    let mut worst = [0.0f64; 6];
    let names = [
        "affine flow",
        "additive flow",
        "gaussian-reparam",
        "noisy-flow",
        "combined",
        "hybrid",
    ];
    for trial in 0..50 {
        let kind = trial % 6;
        let d = 2 + rng.below(5);
        let err = if kind < 2 {
            let mode = if kind == 0 { CouplingMode::Affine } else { CouplingMode::Additive };
            let flow = random_flow(d, 1 + rng.below(4), mode, &mut rng)?;
            let x = rng.gaussian_vec(d);
            let (_, ld) = flow.forward(&Tensor::repeat_row(&x, 1))?;
            let fd = fd_log_abs_det(|p| Ok(flow.forward(&Tensor::repeat_row(p, 1))?.0.into_data()), &x, 1e-5)?;
            rel(ld[0], fd)
        } else {
            let cf = random_conditional(PosteriorForm::ALL[kind - 2], d, &mut rng)?;
            let x = Tensor::repeat_row(&rng.gaussian_vec(d), 1);
            let u = rng.gaussian_vec(d);
            let (_, ld) = cf.forward(&x, &Tensor::repeat_row(&u, 1))?;
            let fd = fd_log_abs_det(|p| Ok(cf.forward(&x, &Tensor::repeat_row(p, 1))?.0.into_data()), &u, 1e-5)?;
            rel(ld[0], fd)
        };
        worst[kind] = worst[kind].max(err);
    }
    Ok(names
        .iter()
        .zip(worst)
        .map(|(n, v)| Check {
            name: format!("{n} logdet vs finite-difference determinant"),
            value: v,
            tolerance: 1e-5,
        })
        .collect())
}

type Probe = for<'t> fn(&'t Tape, Var<'t>) -> crate::autodiff::Result<Var<'t>>;

fn weights(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| (1.0 + 0.7 * i as f64).sin()).collect()).expect("non-empty")
}

/// Contract with fixed weights so every output element matters.
fn readout<'t>(tape: &'t Tape, y: Var<'t>) -> crate::autodiff::Result<Var<'t>> {
    Ok(y.mul(tape.constant(weights(&y.shape())))?.sum())
}

/// One probe per differentiable primitive, each mapping a `[3, 4]` input (or
/// `[1, 1]` / `[4]` where stated) to a scalar.
pub fn primitive_probes() -> Vec<(&'static str, Vec<usize>, Probe)> {
    vec![
        ("add", vec![3, 4], |t, x| readout(t, x.add(x.tanh())?)),
        ("sub", vec![3, 4], |t, x| readout(t, x.sub(x.square())?)),
        ("mul", vec![3, 4], |t, x| readout(t, x.mul(x.tanh())?)),
        ("scale", vec![3, 4], |t, x| readout(t, x.scale(-2.5))),
        ("matmul", vec![3, 4], |t, x| {
            let right = x.matmul(t.constant(weights(&[4, 2])))?;
            let left = t.constant(weights(&[2, 3])).matmul(x)?;
            readout(t, right)?.add(readout(t, left)?)
        }),
        ("tanh", vec![3, 4], |t, x| readout(t, x.tanh())),
        ("relu", vec![3, 4], |t, x| readout(t, x.relu())),
        ("exp", vec![3, 4], |t, x| readout(t, x.exp())),
        ("log", vec![3, 4], |t, x| readout(t, x.square().add_const(0.5)?.log()?)),
        ("square", vec![3, 4], |t, x| readout(t, x.square())),
        ("sum", vec![3, 4], |_, x| Ok(x.square().sum())),
        ("mean", vec![3, 4], |_, x| Ok(x.tanh().mean())),
        ("split", vec![3, 4], |t, x| {
            let (a, b) = x.split(1)?;
            readout(t, a.exp())?.add(readout(t, b.square())?)
        }),
        ("concat", vec![3, 4], |t, x| readout(t, x.concat(x.tanh())?)),
        ("add_row", vec![4], |t, r| readout(t, t.constant(weights(&[3, 4])).add_row(r)?.square())),
        ("sum_rows", vec![3, 4], |t, x| readout(t, x.square().sum_rows()?)),
        ("broadcast_scalar", vec![1, 1], |t, s| readout(t, s.broadcast_scalar(3, 2)?.exp())),
        ("mul_scalar", vec![1, 1], |t, s| readout(t, t.constant(weights(&[3, 4])).mul_scalar(s.tanh())?)),
    ]
}

fn param_list(model: &FvaeModel) -> Vec<(String, Tensor)> {
    let mut v = Vec::new();
    model.visit_params("", &mut |n, t| {
        if t.requires_grad {
            v.push((n.to_string(), t.clone()));
        }
    });
    v
}

fn nudge(model: &FvaeModel, target: &str, index: usize, delta: f64) -> FvaeModel {
    let mut m = model.clone();
    m.visit_params_mut("", &mut |n, t| {
        if n == target {
            t.data_mut()[index] += delta;
        }
    });
    m
}

/// Worst relative error between the autodiff gradient of the batch loss and
/// central differences, over every trainable parameter element.
pub fn loss_gradient_error(model: &FvaeModel, x: &Tensor, u: &Tensor, step: f64) -> Result<f64> {
    let loss = |m: &FvaeModel| -> Result<f64> {
        let tape = Tape::new();
        Ok(fvae_loss_tape(&tape, m, tape.constant(x.clone()), tape.constant(u.clone()))?.total.item())
    };
    let tape = Tape::new();
    let terms = fvae_loss_tape(&tape, model, tape.constant(x.clone()), tape.constant(u.clone()))?;
    let grads = tape.backward(terms.total)?;
    let mut analytic = Vec::new();
    model.visit_params("", &mut |n, t| {
        if t.requires_grad {
            analytic.push((n.to_string(), grads.of(t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()])));
        }
    });
    let mut worst: f64 = 0.0;
    for ((name, t), (_, g)) in param_list(model).iter().zip(&analytic) {
        for i in 0..t.numel() {
            let fd = (loss(&nudge(model, name, i, step))? - loss(&nudge(model, name, i, -step))?) / (2.0 * step);
            worst = worst.max(rel(g[i], fd));
        }
    }
    Ok(worst)
}

fn tiny_model(mode: Mode, d: usize, seed: u64) -> Result<FvaeModel> {
    let mut m = build_model(&ModelConfig {
        mode,
        data_dim: d,
        latent_dim: d,
        hidden: 6,
        blocks: 1,
        flow_layers: 2,
        coupling_hidden: 6,
        noise_sigma: 0.5,
        seed,
        ..ModelConfig::default()
    })?;
    jitter_params(&mut m, &mut SplitMix64::new(seed ^ 0x5eed), 0.3);
    Ok(m)
}

fn gradients() -> Result<Vec<Check>> {
    let mut rng = SplitMix64::new(303);
    let mut out = Vec::new();
    for (name, shape, probe) in primitive_probes() {
        let n = shape.iter().product();
        let point = Tensor::new(shape, rng.gaussian_vec(n))?;
        out.push(Check {
            name: format!("primitive {name}"),
            value: grad_check(probe, &point, 1e-5)?,
            tolerance: 1e-4,
        });
    }
    for mode in Mode::ALL {
        let m = tiny_model(mode, 4, 7)?;
        let x = gaussian(3, 4, &mut rng);
        let u = gaussian(3, 4, &mut rng);
        out.push(Check {
            name: format!("loss d=4 {}", mode.name()),
            value: loss_gradient_error(&m, &x, &u, 1e-5)?,
            tolerance: 1e-4,
        });
    }
    Ok(out)
}

/// Gaussian-posterior model whose posterior ignores `x`: `N(mu, diag(sigma²))`.
pub fn fixed_gaussian_posterior(mu: &[f64], sigma: &[f64], seed: u64) -> Result<FvaeModel> {
    let d = mu.len();
    if sigma.len() != d {
        return Err(Error::Width {
            expected: d,
            got: sigma.len(),
        });
    }
    let mut m = build_model(&ModelConfig {
        mode: Mode::VaeReduction,
        data_dim: d,
        latent_dim: d,
        hidden: 4,
        blocks: 1,
        seed,
        ..ModelConfig::default()
    })?;
    let Posterior::GaussianReparam { head, .. } = &mut m.cf.posterior else {
        unreachable!("vae-reduction models have a Gaussian posterior")
    };
    head.mu.weight.data_mut().fill(0.0);
    head.mu.bias.data_mut().copy_from_slice(mu);
    head.sigma.weight.data_mut().fill(0.0);
    for (b, s) in head.sigma.bias.data_mut().iter_mut().zip(sigma) {
        *b = inverse_softplus(s - 1e-6);
    }
    Ok(m)
}

/// Monte Carlo mean and standard error of the KL part of the loss.
pub fn mc_kl_part(model: &FvaeModel, x: &[f64], draws: usize, rng: &mut SplitMix64) -> Result<(f64, f64)> {
    let d = model.latent_dim();
    let xs = Tensor::repeat_row(x, draws);
    let u = gaussian(draws, d, rng);
    let kl: Vec<f64> = per_sample_losses(model, &xs, &u)?.iter().map(|l| l.kl_part()).collect();
    let n = kl.len() as f64;
    let mean = kl.iter().sum::<f64>() / n;
    let var = kl.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Per-sample `fvae_loss − flow_nll − gap` and the worst parameter-gradient
/// difference between the two objectives, for a flow-reduction model.
pub fn flow_reduction_residuals(model: &FvaeModel, x: &Tensor, u: &Tensor) -> Result<(f64, f64)> {
    let Posterior::NoisyFlow { flow, noise_sigma } = &model.cf.posterior else {
        return Err(Error::WrongMode {
            op: "flow_reduction_residuals",
            mode: model.mode().name().to_string(),
        });
    };
    let tape = Tape::new();
    let (xv, uv) = (tape.constant(x.clone()), tape.constant(u.clone()));
    let fv = fvae_terms_tape(&tape, model, xv, uv)?.total;
    let nll = flow_nll_terms_tape(&tape, flow, xv, uv, *noise_sigma)?;
    let (fvals, nvals) = (fv.value(), nll.value());
    let mut worst_value: f64 = 0.0;
    for i in 0..x.rows() {
        let gap = flow_reduction_gap(u.row(i), *noise_sigma, model.sigma2());
        worst_value = worst_value.max((fvals[i] - nvals[i] - gap).abs());
    }
    let diff = fv.sub(nll)?.mean();
    let grads = tape.backward(diff)?;
    let mut worst_grad: f64 = 0.0;
    flow.visit_params("", &mut |_, t| {
        if let Some(g) = grads.of(t) {
            worst_grad = g.iter().fold(worst_grad, |a, v| a.max(v.abs()));
        }
    });
    Ok((worst_value, worst_grad))
}

fn reductions() -> Result<Vec<Check>> {
    let mut rng = SplitMix64::new(404);
    let mut worst_z: f64 = 0.0;
    for trial in 0..20 {
        let d = 1 + rng.below(4);
        let mu: Vec<f64> = rng.gaussian_vec(d);
        let sigma: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.3, 2.0)).collect();
        let m = fixed_gaussian_posterior(&mu, &sigma, trial)?;
        let (mean, se) = mc_kl_part(&m, &vec![0.0; d], 100_000, &mut rng)?;
        worst_z = worst_z.max((mean - kl_gaussian(&mu, &sigma)?).abs() / se);
    }
    let (mut worst_value, mut worst_grad) = (0.0f64, 0.0f64);
    for trial in 0..20 {
        let d = 2 + rng.below(3);
        let mut m = tiny_model(Mode::FlowReduction, d, 500 + trial)?;
        if trial % 2 == 1 {
            // A decoder scale different from the noise scale leaves a
            // parameter-free gap.
            m.log_sigma2.data_mut()[0] = rng.uniform_range(-1.0, 0.5);
        }
        let x = gaussian(8, d, &mut rng);
        let u = gaussian(8, d, &mut rng);
        let (v, g) = flow_reduction_residuals(&m, &x, &u)?;
        worst_value = worst_value.max(v);
        worst_grad = worst_grad.max(g);
    }
    Ok(vec![
        Check {
            name: "vae reduction: |MC KL - closed form| in standard errors".into(),
            value: worst_z,
            tolerance: 3.0,
        },
        Check {
            name: "flow reduction: loss minus flow nll minus constant".into(),
            value: worst_value,
            tolerance: 1e-8,
        },
        Check {
            name: "flow reduction: gradient of the difference".into(),
            value: worst_grad,
            tolerance: 1e-8,
        },
    ])
}

fn normalization() -> Result<Vec<Check>> {
    let mut rng = SplitMix64::new(505);
    let grid = GridSpec::square(6.0, 300);
    let mut out = Vec::new();
    for form in PosteriorForm::ALL {
        let cf = random_conditional(form, 2, &mut rng)?;
        let x = rng.gaussian_vec(2);
        let mass = grid_integral_2d(
            |pts| cf.posterior_log_density_batch(&Tensor::repeat_row(&x, pts.rows()), pts),
            &grid,
        )?;
        out.push(Check {
            name: format!("posterior {} integrates to one", form.name()),
            value: (mass - 1.0).abs(),
            tolerance: 1e-2,
        });
    }
    let flow = random_flow(2, 4, CouplingMode::Affine, &mut rng)?;
    let mass = grid_integral_2d(|pts| flow_exact_log_density(&flow, pts), &grid)?;
    out.push(Check {
        name: "flow density integrates to one".into(),
        value: (mass - 1.0).abs(),
        tolerance: 1e-2,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_names_parse() {
        for s in Scope::SUITES.into_iter().chain([Scope::All]) {
            assert_eq!(Scope::parse(s.name()), Some(s));
        }
        assert_eq!(Scope::parse("everything"), None);
    }

    #[test]
    fn fd_determinant_of_linear_map() {
        let ld = fd_log_abs_det(|p| Ok(vec![2.0 * p[0] + p[1], 3.0 * p[1]]), &[0.3, 0.1], 1e-5).unwrap();
        assert!((ld - 6f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn fixed_posterior_has_requested_moments() {
        let m = fixed_gaussian_posterior(&[0.5, -1.0], &[0.3, 2.0], 1).unwrap();
        let (mu, sigma) = m.cf.gaussian_parameters(&Tensor::new(vec![1, 2], vec![4.0, -3.0]).unwrap()).unwrap();
        assert!((mu.data()[0] - 0.5).abs() < 1e-12 && (mu.data()[1] + 1.0).abs() < 1e-12);
        assert!((sigma.data()[0] - 0.3).abs() < 1e-9 && (sigma.data()[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn invertibility_suite_passes() {
        let report = run(Scope::Invertibility).unwrap();
        assert!(report[0].passed(), "{:?}", report[0].failures().collect::<Vec<_>>());
    }

    #[test]
    fn logdet_suite_passes() {
        let report = run(Scope::Logdet).unwrap();
        assert!(report[0].passed(), "{:?}", report[0].failures().collect::<Vec<_>>());
    }
}
