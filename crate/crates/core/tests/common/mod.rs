#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use spectral_renyi::models::{Grad, Hess, ModelKind, SpectralEval, SpectralModel, MAX_PARAMS};
use spectral_renyi::spectral::{FreqGrid, SpectrumSamples};
use spectral_renyi::Result;

/// One-parameter toy family `S_θ ≡ e^θ`.
#[derive(Debug)]
pub struct ExpModel;

impl SpectralModel for ExpModel {
    fn name(&self) -> &'static str {
        "exp"
    }

    fn dim(&self) -> usize {
        1
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["theta"]
    }

    fn validate(&self, _theta: &[f64]) -> Result<()> {
        Ok(())
    }

    fn density(&self, theta: &[f64], _omega: f64) -> f64 {
        theta[0].exp()
    }

    fn density_and_grad(&self, theta: &[f64], _omega: f64) -> (f64, Grad) {
        (theta[0].exp(), [1.0, 0.0, 0.0])
    }

    fn eval(&self, theta: &[f64], omega: f64) -> SpectralEval {
        let (value, grad_log) = self.density_and_grad(theta, omega);
        SpectralEval {
            value,
            dim: 1,
            grad_log,
            hess_log: [[0.0; MAX_PARAMS]; MAX_PARAMS] as Hess,
        }
    }
}

/// Random positive even spectrum on an `n`-point grid, log-uniform over
/// `[1e-3, 1e3]`.
pub fn random_spectrum(rng: &mut ChaCha8Rng, grid: &FreqGrid) -> SpectrumSamples {
    let mut v = vec![0.0; grid.n()];
    for i in 0..grid.n() {
        if grid.freqs()[i] >= 0.0 {
            let x = 10f64.powf(rng.random_range(-3.0..3.0));
            v[i] = x;
            v[grid.mirror_index(i)] = x;
        }
    }
    SpectrumSamples::new(grid.clone(), v).unwrap()
}

pub fn random_theta(rng: &mut ChaCha8Rng, kind: ModelKind) -> Vec<f64> {
    match kind {
        ModelKind::Ar1 => vec![rng.random_range(-1.0..1.0), rng.random_range(-2.5..2.5)],
        ModelKind::Brune => (0..3).map(|_| rng.random_range(0.5..2.0)).collect(),
        ModelKind::BruneLog => (0..3).map(|_| rng.random_range(-0.7..0.7)).collect(),
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(b)).max(1e-8)
}

/// Central-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let h = 1e-5 * theta[k].abs().max(1.0);
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[k] += h;
            m[k] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian of a vector field, as rows.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, theta: &[f64]) -> Vec<Vec<f64>> {
    let d = theta.len();
    let mut cols = Vec::with_capacity(d);
    for k in 0..d {
        let h = 1e-5 * theta[k].abs().max(1.0);
        let mut p = theta.to_vec();
        let mut m = theta.to_vec();
        p[k] += h;
        m[k] -= h;
        let (fp, fm) = (f(&p), f(&m));
        cols.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<f64>>(),
        );
    }
    (0..d).map(|i| (0..d).map(|j| cols[j][i]).collect()).collect()
}

pub fn flatten(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}
