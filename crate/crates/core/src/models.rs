//! Differentiable parametric spectral families.
//!
//! A model exposes, per frequency, the density `S_θ(ω)`, the log-gradient
//! `∇_θ log S_θ(ω)` and the log-Hessian `∇²_θ log S_θ(ω)`. Divergence and
//! optimizer code only see the [`SpectralModel`] trait, so new families plug
//! in without touching them.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::linalg::sym_op_norm;
use crate::spectral::{FreqGrid, Spectrum};

/// Largest parameter dimension supported by [`SpectralEval`].
pub const MAX_PARAMS: usize = 3;

/// Value used when an iterate is clamped back into the positive orthant.
pub const POSITIVE_CLAMP: f64 = 1e-8;

pub type Grad = [f64; MAX_PARAMS];
pub type Hess = [[f64; MAX_PARAMS]; MAX_PARAMS];

/// Value, log-gradient and log-Hessian of a model at one frequency. Entries
/// beyond `dim` are zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEval {
    pub value: f64,
    pub dim: usize,
    pub grad_log: Grad,
    pub hess_log: Hess,
}

impl SpectralEval {
    pub fn grad(&self) -> &[f64] {
        &self.grad_log[..self.dim]
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.hess_log[i][j]
    }
}

pub trait SpectralModel: Debug + Send + Sync {
    /// Short identifier used in messages and records.
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn param_names(&self) -> &'static [&'static str];

    /// Errors unless θ lies in the admissible set.
    fn validate(&self, theta: &[f64]) -> Result<()>;

    fn density(&self, theta: &[f64], omega: f64) -> f64;

    /// `(S_θ(ω), ∇_θ log S_θ(ω))`.
    fn density_and_grad(&self, theta: &[f64], omega: f64) -> (f64, Grad);

    fn eval(&self, theta: &[f64], omega: f64) -> SpectralEval;

    /// Pulls θ back into the admissible set in place; returns whether a
    /// coordinate was changed.
    fn project(&self, _theta: &mut [f64]) -> bool {
        false
    }
}

/// The density of a model at a fixed θ, usable wherever a [`Spectrum`] is.
#[derive(Clone, Debug)]
pub struct ModelSpectrum<'a> {
    model: &'a dyn SpectralModel,
    theta: Vec<f64>,
}

impl<'a> ModelSpectrum<'a> {
    pub fn new(model: &'a dyn SpectralModel, theta: &[f64]) -> Result<Self> {
        check_dim(model, theta)?;
        model.validate(theta)?;
        Ok(Self {
            model,
            theta: theta.to_vec(),
        })
    }
}

impl Spectrum for ModelSpectrum<'_> {
    fn density(&self, omega: f64) -> f64 {
        self.model.density(&self.theta, omega)
    }
}

pub(crate) fn check_dim(model: &dyn SpectralModel, theta: &[f64]) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(invalid(format!(
            "{} expects {} parameters, got {}",
            model.name(),
            model.dim(),
            theta.len()
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(domain(format!("non-finite parameter vector {theta:?}")));
    }
    Ok(())
}

/// A parameter vector tagged with its family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub model: ModelKind,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ar1,
    Brune,
    BruneLog,
}

/// `{model: "ar1"|"brune"|"brune-log", params: [...]}` with params in the
/// model's optimisation coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub params: Vec<f64>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<Arc<dyn SpectralModel>> {
        let m = self.model.build();
        check_dim(m.as_ref(), &self.params)?;
        m.validate(&self.params)?;
        Ok(m)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar1" => Ok(ModelKind::Ar1),
            "brune" => Ok(ModelKind::Brune),
            "brune-log" => Ok(ModelKind::BruneLog),
            _ => Err(invalid(format!(
                "unknown model {s:?}; expected ar1, brune or brune-log"
            ))),
        }
    }
}

impl ModelKind {
    pub fn build(self) -> Arc<dyn SpectralModel> {
        match self {
            ModelKind::Ar1 => Arc::new(Ar1Model),
            ModelKind::Brune => Arc::new(BruneModel::raw()),
            ModelKind::BruneLog => Arc::new(BruneModel::log()),
        }
    }
}

// ---------------------------------------------------------------------------
// AR(1)

/// AR(1) in the unconstrained coordinates `θ₁ = log σ`,
/// `θ₂ = log((1+ρ)/(1−ρ))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ar1Params {
    pub theta1: f64,
    pub theta2: f64,
}

impl Ar1Params {
    pub fn from_natural(sigma: f64, rho: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(domain(format!("AR(1) needs σ > 0, got {sigma}")));
        }
        if !(rho.abs() < 1.0) {
            return Err(domain(format!("AR(1) needs |ρ| < 1, got {rho}")));
        }
        Ok(Self {
            theta1: sigma.ln(),
            theta2: ((1.0 + rho) / (1.0 - rho)).ln(),
        })
    }

    /// `(σ, ρ)`.
    pub fn to_natural(self) -> (f64, f64) {
        (self.theta1.exp(), (0.5 * self.theta2).tanh())
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.theta1, self.theta2]
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        match theta {
            [a, b] if a.is_finite() && b.is_finite() => Ok(Self { theta1: *a, theta2: *b }),
            _ => Err(invalid(format!(
                "AR(1) parameters must be two finite reals, got {theta:?}"
            ))),
        }
    }
}

/// `S(ω) = σ²/(2π(1 − 2ρ cos ω + ρ²))`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Ar1Model;

impl Ar1Model {
    #[inline]
    fn parts(theta: &[f64], omega: f64) -> (f64, f64, f64, f64) {
        let rho = (0.5 * theta[1]).tanh();
        let c = omega.cos();
        let denom = 1.0 - 2.0 * rho * c + rho * rho;
        let value = (2.0 * theta[0]).exp() / (2.0 * PI * denom);
        (value, rho, c, denom)
    }
}

impl SpectralModel for Ar1Model {
    fn name(&self) -> &'static str {
        "ar1"
    }

    fn dim(&self) -> usize {
        2
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["log_sigma", "log_rho_ratio"]
    }

    fn validate(&self, theta: &[f64]) -> Result<()> {
        Ar1Params::from_slice(theta).map(|_| ())
    }

    fn density(&self, theta: &[f64], omega: f64) -> f64 {
        Self::parts(theta, omega).0
    }

    fn density_and_grad(&self, theta: &[f64], omega: f64) -> (f64, Grad) {
        let (value, rho, c, denom) = Self::parts(theta, omega);
        let g2 = (1.0 - rho * rho) * (c - rho) / denom;
        (value, [2.0, g2, 0.0])
    }

    fn eval(&self, theta: &[f64], omega: f64) -> SpectralEval {
        let (value, rho, c, denom) = Self::parts(theta, omega);
        let one_m = 1.0 - rho * rho;
        let g2 = one_m * (c - rho) / denom;
        // d/dρ of (1−ρ²)(c−ρ)/D, then chain rule with dρ/dθ₂ = (1−ρ²)/2
        let dh = (-2.0 * rho * (c - rho) - one_m) / denom + 2.0 * one_m * (c - rho) * (c - rho) / (denom * denom);
        let h22 = dh * one_m / 2.0;
        let mut hess = [[0.0; MAX_PARAMS]; MAX_PARAMS];
        hess[1][1] = h22;
        SpectralEval {
            value,
            dim: 2,
            grad_log: [2.0, g2, 0.0],
            hess_log: hess,
        }
    }
}

/// AR(1) evaluation from typed parameters.
pub fn eval_ar1(theta: &Ar1Params, omega: f64) -> SpectralEval {
    Ar1Model.eval(&[theta.theta1, theta.theta2], omega)
}

/// Raw-to-unconstrained AR(1) map.
pub fn ar1_natural_to_unconstrained(sigma: f64, rho: f64) -> Result<Ar1Params> {
    Ar1Params::from_natural(sigma, rho)
}

/// Inverse of [`ar1_natural_to_unconstrained`].
pub fn ar1_unconstrained_to_natural(theta: Ar1Params) -> (f64, f64) {
    theta.to_natural()
}

// ---------------------------------------------------------------------------
// Brune with attenuation

/// `(σ, ω_c, Q)`, all strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BruneParams {
    pub sigma: f64,
    pub corner: f64,
    pub q: f64,
}

impl BruneParams {
    pub fn new(sigma: f64, corner: f64, q: f64) -> Result<Self> {
        let p = Self { sigma, corner, q };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [("σ", self.sigma), ("ω_c", self.corner), ("Q", self.q)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain(format!("Brune parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.sigma, self.corner, self.q]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BruneCoords {
    /// Descent directly on `(σ, ω_c, Q)`.
    Raw,
    /// Descent on `(log σ, log ω_c, log Q)`.
    Log,
}

/// `S(ω) = ω² σ² / (1 + (ω/ω_c)²)² · exp(−|ω|/Q)`, even in ω.
#[derive(Clone, Copy, Debug)]
pub struct BruneModel {
    coords: BruneCoords,
}

impl BruneModel {
    pub fn raw() -> Self {
        Self {
            coords: BruneCoords::Raw,
        }
    }

    pub fn log() -> Self {
        Self {
            coords: BruneCoords::Log,
        }
    }

    pub fn coords(&self) -> BruneCoords {
        self.coords
    }

    /// `(σ, ω_c, Q)` from optimisation coordinates.
    #[inline]
    pub fn natural(&self, theta: &[f64]) -> [f64; 3] {
        match self.coords {
            BruneCoords::Raw => [theta[0], theta[1], theta[2]],
            BruneCoords::Log => [theta[0].exp(), theta[1].exp(), theta[2].exp()],
        }
    }

    #[inline]
    fn raw_value_grad(p: [f64; 3], omega: f64) -> (f64, Grad, f64) {
        let [sigma, wc, q] = p;
        let w = omega.abs();
        let u = (w / wc) * (w / wc);
        let one_u = 1.0 + u;
        let value = w * w * sigma * sigma / (one_u * one_u) * (-w / q).exp();
        let grad = [2.0 / sigma, 4.0 * u / (wc * one_u), w / (q * q)];
        (value, grad, u)
    }

    fn raw_eval(p: [f64; 3], omega: f64) -> SpectralEval {
        let [sigma, wc, q] = p;
        let (value, grad, u) = Self::raw_value_grad(p, omega);
        let one_u = 1.0 + u;
        let mut hess = [[0.0; MAX_PARAMS]; MAX_PARAMS];
        hess[0][0] = -2.0 / (sigma * sigma);
        hess[1][1] = -4.0 * u * (3.0 + u) / (wc * wc * one_u * one_u);
        hess[2][2] = -2.0 * omega.abs() / (q * q * q);
        SpectralEval {
            value,
            dim: 3,
            grad_log: grad,
            hess_log: hess,
        }
    }
}

impl SpectralModel for BruneModel {
    fn name(&self) -> &'static str {
        match self.coords {
            BruneCoords::Raw => "brune",
            BruneCoords::Log => "brune-log",
        }
    }

    fn dim(&self) -> usize {
        3
    }

    fn param_names(&self) -> &'static [&'static str] {
        match self.coords {
            BruneCoords::Raw => &["sigma", "corner", "q"],
            BruneCoords::Log => &["log_sigma", "log_corner", "log_q"],
        }
    }

    fn validate(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != 3 || theta.iter().any(|t| !t.is_finite()) {
            return Err(invalid(format!(
                "Brune parameters must be three finite reals, got {theta:?}"
            )));
        }
        let [s, w, q] = self.natural(theta);
        BruneParams { sigma: s, corner: w, q }.check()
    }

    fn density(&self, theta: &[f64], omega: f64) -> f64 {
        Self::raw_value_grad(self.natural(theta), omega).0
    }

    fn density_and_grad(&self, theta: &[f64], omega: f64) -> (f64, Grad) {
        let p = self.natural(theta);
        let (v, g, _) = Self::raw_value_grad(p, omega);
        match self.coords {
            BruneCoords::Raw => (v, g),
            BruneCoords::Log => (v, [g[0] * p[0], g[1] * p[1], g[2] * p[2]]),
        }
    }

    fn eval(&self, theta: &[f64], omega: f64) -> SpectralEval {
        let p = self.natural(theta);
        let raw = Self::raw_eval(p, omega);
        match self.coords {
            BruneCoords::Raw => raw,
            BruneCoords::Log => {
                // ∂/∂φ = θ ∂/∂θ, so H_φ = diag(θ) H_θ diag(θ) + diag(θ ∘ g_θ)
                let mut out = raw;
                for i in 0..3 {
                    out.grad_log[i] = raw.grad_log[i] * p[i];
                    for j in 0..3 {
                        out.hess_log[i][j] = p[i] * raw.hess_log[i][j] * p[j];
                    }
                    out.hess_log[i][i] += p[i] * raw.grad_log[i];
                }
                out
            }
        }
    }

    fn project(&self, theta: &mut [f64]) -> bool {
        if self.coords == BruneCoords::Log {
            return false;
        }
        let mut clamped = false;
        for t in theta.iter_mut() {
            if !(*t > 0.0) {
                *t = POSITIVE_CLAMP;
                clamped = true;
            }
        }
        clamped
    }
}

/// Brune evaluation with argument checks. ω = 0 is rejected because the log
/// of the density is singular there.
pub fn eval_brune(theta: &BruneParams, omega: f64) -> Result<SpectralEval> {
    theta.check()?;
    if omega == 0.0 {
        return Err(Error::SingularFrequency(omega));
    }
    Ok(BruneModel::raw().eval(&theta.to_vec(), omega))
}

// ---------------------------------------------------------------------------
// Assumption constants

/// Grid-search estimates of the gradient bound `U1` and the averaged
/// Hessian bound `U2` over a coordinate box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub u1: f64,
    pub u2: f64,
}

/// Evaluates both constants on a `points_per_axis^d` lattice over `bounds`
/// (inclusive endpoints) and the included frequencies of `grid`.
///
/// `U1` is the largest of `‖∇S‖`, `‖∇log S‖` and `‖∇log S / S‖`; `U2` is the
/// largest grid-averaged `‖∇²log S‖_op`. Nested lattices give monotone
/// estimates.
pub fn model_bound_constants(
    model: &dyn SpectralModel,
    bounds: &[(f64, f64)],
    grid: &FreqGrid,
    points_per_axis: usize,
) -> Result<BoundConstants> {
    let d = model.dim();
    if bounds.len() != d {
        return Err(invalid(format!(
            "box has {} sides, model has {d} parameters",
            bounds.len()
        )));
    }
    if points_per_axis < 2 {
        return Err(invalid("lattice needs at least two points per axis"));
    }
    for &(lo, hi) in bounds {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("bad box side [{lo}, {hi}]")));
        }
    }
    let total = points_per_axis.pow(d as u32);
    let mut theta = vec![0.0; d];
    let mut u1 = 0.0f64;
    let mut u2 = 0.0f64;
    let freqs: Vec<f64> = grid.included_indices().map(|i| grid.freqs()[i]).collect();
    for flat in 0..total {
        let mut rem = flat;
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            let idx = rem % points_per_axis;
            rem /= points_per_axis;
            theta[k] = lo + (hi - lo) * idx as f64 / (points_per_axis - 1) as f64;
        }
        model
            .validate(&theta)
            .map_err(|e| domain(format!("box leaves the admissible set at {theta:?}: {e}")))?;
        let mut hsum = 0.0;
        for &w in &freqs {
            let e = model.eval(&theta, w);
            let g = norm(e.grad());
            if e.value <= 0.0 {
                return Err(Error::SingularFrequency(w));
            }
            u1 = u1.max(g).max(g * e.value).max(g / e.value);
            hsum += sym_op_norm(&e.hess_log, d);
        }
        u2 = u2.max(hsum / freqs.len() as f64);
    }
    Ok(BoundConstants { u1, u2 })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar1_white_noise_example() {
        let e = eval_ar1(&Ar1Params::from_natural(1.0, 0.0).unwrap(), PI / 2.0);
        assert!((e.value - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(e.grad()[0], 2.0);
        assert!(e.grad()[1].abs() < 1e-15);
        for w in [0.0, 0.3, 2.0, PI] {
            assert_eq!(eval_ar1(&Ar1Params::from_natural(1.0, 0.0).unwrap(), w).grad()[0], 2.0);
        }
    }

    #[test]
    fn ar1_reparametrisation() {
        let p = ar1_natural_to_unconstrained(1.0, 0.0).unwrap();
        assert_eq!((p.theta1, p.theta2), (0.0, 0.0));
        let p = ar1_natural_to_unconstrained(std::f64::consts::E, 0.5).unwrap();
        assert!((p.theta1 - 1.0).abs() < 1e-15);
        assert!((p.theta2 - 3f64.ln()).abs() < 1e-15);
        assert!(ar1_natural_to_unconstrained(1.0, 1.0).is_err());
        assert!(ar1_natural_to_unconstrained(1.0, -1.2).is_err());
        assert!(ar1_natural_to_unconstrained(0.0, 0.2).is_err());
    }

    #[test]
    fn brune_examples() {
        let e = eval_brune(&BruneParams::new(1.0, 1.0, 1.0).unwrap(), 1.0).unwrap();
        assert!((e.value - 0.25 * (-1f64).exp()).abs() < 1e-15);
        assert!((e.value - 0.0919699).abs() < 1e-7);
        for w in [0.1, 1.0, 3.0] {
            let e = eval_brune(&BruneParams::new(2.0, 0.7, 1.3).unwrap(), w).unwrap();
            assert_eq!(e.grad()[0], 1.0);
        }
        assert!(matches!(
            eval_brune(&BruneParams::new(1.0, 1.0, 1.0).unwrap(), 0.0),
            Err(Error::SingularFrequency(_))
        ));
        assert!(BruneParams::new(1.0, -1.0, 1.0).is_err());
        assert_eq!(BruneModel::raw().density(&[1.0, 1.0, 1.0], 0.0), 0.0);
    }

    #[test]
    fn brune_projection_clamps() {
        let m = BruneModel::raw();
        let mut t = [1.0, -0.2, 0.0];
        assert!(m.project(&mut t));
        assert_eq!(t, [1.0, POSITIVE_CLAMP, POSITIVE_CLAMP]);
        let mut ok = [1.0, 0.2, 3.0];
        assert!(!m.project(&mut ok));
    }

    #[test]
    fn model_config_record() {
        let cfg: ModelConfig = serde_json::from_str(r#"{"model":"brune","params":[1,0.1,1]}"#).unwrap();
        assert_eq!(cfg.model, ModelKind::Brune);
        assert!(cfg.build().is_ok());
        let bad: ModelConfig = serde_json::from_str(r#"{"model":"ar1","params":[1]}"#).unwrap();
        assert!(bad.build().is_err());
        let s = serde_json::to_string(&ModelConfig {
            model: ModelKind::BruneLog,
            params: vec![0.0; 3],
        })
        .unwrap();
        assert_eq!(s, r#"{"model":"brune-log","params":[0.0,0.0,0.0]}"#);
    }

    #[test]
    fn ar1_bound_constants() {
        let grid = FreqGrid::new(128, true).unwrap();
        let b = model_bound_constants(&Ar1Model, &[(-1.0, 1.0), (-1.0, 1.0)], &grid, 9).unwrap();
        assert!(b.u1 >= 2.0);
        assert!(b.u2 > 0.0);
        // nested lattice (9 -> 17 points per axis) can only grow the sup
        let fine = model_bound_constants(&Ar1Model, &[(-1.0, 1.0), (-1.0, 1.0)], &grid, 17).unwrap();
        assert!(fine.u1 >= b.u1 && fine.u2 >= b.u2);
    }

    #[test]
    fn bound_box_must_be_admissible() {
        let grid = FreqGrid::new(64, true).unwrap();
        let r = model_bound_constants(&BruneModel::raw(), &[(-0.5, 1.0), (0.5, 1.0), (0.5, 1.0)], &grid, 3);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
