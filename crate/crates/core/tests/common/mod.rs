//! Reference computations shared by the integration tests. Nothing here calls
//! into the library's own numerics.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Central-difference Jacobian, `jac[i][j] = ∂fᵢ/∂xⱼ`.
pub fn fd_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[j] += h;
        m[j] -= h;
        let (fp, fm) = (f(&p), f(&m));
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    let rows = cols.first().map_or(0, Vec::len);
    (0..rows).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

/// `log|det a|` by Gaussian elimination with partial pivoting.
pub fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let pivot = a[c][c];
        if pivot == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += pivot.abs().ln();
        for r in c + 1..n {
            let k = a[r][c] / pivot;
            for j in c..n {
                a[r][j] -= k * a[c][j];
            }
        }
    }
    acc
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|j| {
            p[j] = x[j] + h;
            let fp = f(&p);
            p[j] = x[j] - h;
            let fm = f(&p);
            p[j] = x[j];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

/// Midpoint rule for `∫∫ exp(log_f)` over a rectangle with `n × n` cells.
/// `log_f` receives one grid row of points at a time.
pub fn midpoint_mass<F: FnMut(&[[f64; 2]]) -> Vec<f64>>(mut log_f: F, lo: [f64; 2], hi: [f64; 2], n: usize) -> f64 {
    let hx = (hi[0] - lo[0]) / n as f64;
    let hy = (hi[1] - lo[1]) / n as f64;
    let mut total = 0.0;
    for j in 0..n {
        let y = lo[1] + (j as f64 + 0.5) * hy;
        let row: Vec<[f64; 2]> = (0..n).map(|i| [lo[0] + (i as f64 + 0.5) * hx, y]).collect();
        total += log_f(&row).iter().map(|v| v.exp()).sum::<f64>();
    }
    total * hx * hy
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_to_standard(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0) - s.ln())
        .sum()
}

pub fn kl_normal_1d(m0: f64, s0: f64, m1: f64, s1: f64) -> f64 {
    (s1 / s0).ln() + (s0 * s0 + (m0 - m1).powi(2)) / (2.0 * s1 * s1) - 0.5
}

/// KL between two bivariate normals given as `(mean, [[a, b], [b, c]])`.
pub fn kl_normal_2d(m0: [f64; 2], c0: [[f64; 2]; 2], m1: [f64; 2], c1: [[f64; 2]; 2]) -> f64 {
    let det = |c: [[f64; 2]; 2]| c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let d1 = det(c1);
    let inv1 = [[c1[1][1] / d1, -c1[0][1] / d1], [-c1[1][0] / d1, c1[0][0] / d1]];
    let mut trace = 0.0;
    for i in 0..2 {
        for k in 0..2 {
            trace += inv1[i][k] * c0[k][i];
        }
    }
    let dm = [m1[0] - m0[0], m1[1] - m0[1]];
    let mut quad = 0.0;
    for i in 0..2 {
        for k in 0..2 {
            quad += dm[i] * inv1[i][k] * dm[k];
        }
    }
    0.5 * (trace + quad - 2.0 + (d1 / det(c0)).ln())
}

/// Linear-Gaussian toy in closed form. Data `x ~ N(dm, ds²)`, posterior
/// `z | x ~ N(a·x + b, t²)`, prior `z ~ N(0, 1)`, decoder
/// `x | z ~ N(c·z + e, r²)`. Returns `(joint KL, marginal KL)`.
pub fn toy_kls(dm: f64, ds: f64, a: f64, b: f64, t: f64, c: f64, e: f64, r: f64) -> (f64, f64) {
    // Joint over (x, z) on each side.
    let p_mean = [dm, a * dm + b];
    let p_cov = [[ds * ds, a * ds * ds], [a * ds * ds, a * a * ds * ds + t * t]];
    let q_mean = [e, 0.0];
    let q_cov = [[c * c + r * r, c], [c, 1.0]];
    let joint = kl_normal_2d(p_mean, p_cov, q_mean, q_cov);
    let marginal = kl_normal_1d(dm, ds, e, (c * c + r * r).sqrt());
    (joint, marginal)
}

/// Difference between the noisy-flow f-VAE loss and the flow NLL for base
/// draw `u`, noise scale `s1` and decoder scale `s2`.
pub fn flow_reduction_constant(u: &[f64], s1: f64, s2: f64) -> f64 {
    let n = u.len() as f64;
    let uu: f64 = u.iter().map(|v| v * v).sum();
    // recon ½s1²uu/s2² + n ln s2, minus the ½uu the base term removes, minus
    // the ln s1 per coordinate hidden in the noisy-flow Jacobian.
    0.5 * uu * s1 * s1 / (s2 * s2) - 0.5 * uu + n * (s2.ln() - s1.ln())
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

pub fn log_normal(x: f64, m: f64, s: f64) -> f64 {
    -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln()
}
