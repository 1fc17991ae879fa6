//! Minimum-divergence objectives and gradient descent.
//!
//! [`Objective`] evaluates `D[pilot : S_θ]` with its gradient and Hessian in
//! θ. The optimisers record every iterate in an [`OptimPath`] so paths for
//! clean and contaminated pilots can be compared afterwards.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::divergence::{divergence_term, DivergenceSpec};
use crate::error::{domain, invalid, Error, Result};
use crate::models::{check_dim, norm, SpectralModel, MAX_PARAMS};
use crate::spectral::SpectrumSamples;

/// Consecutive clamps tolerated before a run is declared a projection
/// failure.
pub const MAX_CONSECUTIVE_CLAMPS: usize = 3;

/// `θ ↦ D[pilot : S_θ]` for a fixed pilot, model family and divergence.
#[derive(Clone, Debug)]
pub struct Objective {
    model: Arc<dyn SpectralModel>,
    spec: DivergenceSpec,
    pilot: SpectrumSamples,
    freqs: Vec<f64>,
    pilot_values: Vec<f64>,
}

impl Objective {
    /// Applies the floor and zero-frequency policy of `spec` to the pilot.
    pub fn new(pilot: &SpectrumSamples, model: Arc<dyn SpectralModel>, spec: DivergenceSpec) -> Result<Self> {
        spec.validate()?;
        let pilot = spec.apply_floor(pilot).with_exclude_zero(spec.exclude_zero);
        let grid = pilot.grid();
        let idx: Vec<usize> = grid.included_indices().collect();
        let freqs: Vec<f64> = idx.iter().map(|&i| grid.freqs()[i]).collect();
        let pilot_values: Vec<f64> = idx.iter().map(|&i| pilot.values()[i]).collect();
        if let Some((w, v)) = freqs.iter().zip(&pilot_values).find(|(_, &v)| !(v > 0.0)) {
            return Err(domain(format!("pilot is not positive at ω = {w} ({v})")));
        }
        Ok(Self {
            model,
            spec,
            pilot,
            freqs,
            pilot_values,
        })
    }

    /// Same model and divergence with another pilot.
    pub fn with_pilot(&self, pilot: &SpectrumSamples) -> Result<Self> {
        Self::new(pilot, self.model.clone(), self.spec)
    }

    pub fn model(&self) -> &Arc<dyn SpectralModel> {
        &self.model
    }

    pub fn spec(&self) -> &DivergenceSpec {
        &self.spec
    }

    /// The pilot after floor and frequency policy.
    pub fn pilot(&self) -> &SpectrumSamples {
        &self.pilot
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Normaliser of the discrete sums.
    pub fn n_eff(&self) -> usize {
        self.freqs.len()
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        check_dim(self.model.as_ref(), theta)?;
        self.model.validate(theta)
    }

    fn model_value(&self, s: f64, omega: f64) -> Result<f64> {
        if s > 0.0 && s.is_finite() {
            Ok(s)
        } else if s == 0.0 {
            Err(Error::SingularFrequency(omega))
        } else {
            Err(domain(format!("model density {s} at ω = {omega}")))
        }
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        let alpha = self.spec.alpha;
        let mut acc = 0.0;
        for (&w, &p) in self.freqs.iter().zip(&self.pilot_values) {
            let s = self.model_value(self.model.density(theta, w), w)?;
            acc += divergence_term(alpha, p, s);
        }
        Ok(acc / self.n_eff() as f64)
    }

    /// `(D, ∇_θ D)`.
    pub fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(theta)?;
        let d = self.dim();
        let alpha = self.spec.alpha;
        let is = self.spec.is_itakura_saito();
        let mut acc = 0.0;
        let mut grad = [0.0; MAX_PARAMS];
        for (&w, &p) in self.freqs.iter().zip(&self.pilot_values) {
            let (s, g) = self.model.density_and_grad(theta, w);
            let s = self.model_value(s, w)?;
            let weight = if is {
                acc += divergence_term(1.0, p, s);
                1.0 - p / s
            } else {
                let mix = alpha * s + (1.0 - alpha) * p;
                acc += divergence_term(alpha, p, s);
                alpha / (1.0 - alpha) * (s / mix - 1.0)
            };
            for k in 0..d {
                grad[k] += weight * g[k];
            }
        }
        let n = self.n_eff() as f64;
        Ok((acc / n, grad[..d].iter().map(|g| g / n).collect()))
    }

    /// `∇_θ D`.
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.value_and_gradient(theta).map(|(_, g)| g)
    }

    /// The update direction `−∇_θ D`.
    pub fn descent_direction(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.gradient(theta)?.into_iter().map(|g| -g).collect())
    }

    /// `∇²_θ D` as rows.
    pub fn hessian(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(theta)?;
        let d = self.dim();
        let alpha = self.spec.alpha;
        let is = self.spec.is_itakura_saito();
        let mut h = vec![vec![0.0; d]; d];
        for (&w, &p) in self.freqs.iter().zip(&self.pilot_values) {
            let e = self.model.eval(theta, w);
            let s = self.model_value(e.value, w)?;
            let (outer, second) = if is {
                (p / s, 1.0 - p / s)
            } else {
                let mix = alpha * s + (1.0 - alpha) * p;
                (alpha * p * s / (mix * mix), alpha / (1.0 - alpha) * (s / mix - 1.0))
            };
            for i in 0..d {
                for j in 0..d {
                    h[i][j] += outer * e.grad_log[i] * e.grad_log[j] + second * e.hess_log[i][j];
                }
            }
        }
        let n = self.n_eff() as f64;
        for row in &mut h {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        Ok(h)
    }

    /// Whether stepping `γ` along `−∇D` from θ satisfies the Armijo
    /// condition with constant `c`. Inadmissible trial points fail.
    pub fn armijo_accepts(&self, theta: &[f64], gamma: f64, c: f64) -> Result<bool> {
        let (v, g) = self.value_and_gradient(theta)?;
        let trial: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - gamma * gi).collect();
        let gg: f64 = g.iter().map(|x| x * x).sum();
        Ok(match self.value(&trial) {
            Ok(vt) => vt.is_finite() && vt <= v - c * gamma * gg,
            Err(_) => false,
        })
    }
}

/// `𝒢_α = −∇_θ D_α^(n)` for a Rényi objective (α < 1).
pub fn renyi_gradient(theta: &[f64], objective: &Objective) -> Result<Vec<f64>> {
    if objective.spec().is_itakura_saito() {
        return Err(invalid("renyi_gradient needs an objective with α < 1"));
    }
    objective.descent_direction(theta)
}

/// `𝒢_1 = −∇_θ D_1^(n)` for an Itakura–Saito objective.
pub fn is_gradient(theta: &[f64], objective: &Objective) -> Result<Vec<f64>> {
    if !objective.spec().is_itakura_saito() {
        return Err(invalid("is_gradient needs an objective with α = 1"));
    }
    objective.descent_direction(theta)
}

/// `∇²_θ D^(n)` of the objective.
pub fn renyi_hessian(theta: &[f64], objective: &Objective) -> Result<Vec<Vec<f64>>> {
    objective.hessian(theta)
}

/// Smoothness bound `L = (U1² + U2)/(1−α)`, uniform in the contamination.
pub fn smoothness_bound(u1: f64, u2: f64, alpha: f64) -> Result<f64> {
    if !(u1 >= 0.0 && u2 >= 0.0) {
        return Err(invalid(format!("U1 and U2 must be nonnegative, got {u1}, {u2}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!(
            "the smoothness bound is finite only for α ∈ (0, 1), got {alpha}"
        )));
    }
    Ok((u1 * u1 + u2) / (1.0 - alpha))
}

// ---------------------------------------------------------------------------
// Gradient descent

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            grad_tol: 1e-3,
        }
    }
}

/// Step sizes for fixed-step descent. A sequence shorter than the run keeps
/// its last value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    Constant(f64),
    Sequence(Vec<f64>),
}

impl StepRule {
    fn at(&self, m: usize) -> f64 {
        match self {
            StepRule::Constant(g) => *g,
            StepRule::Sequence(v) => v[m.min(v.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            StepRule::Constant(g) => *g > 0.0 && g.is_finite(),
            StepRule::Sequence(v) => !v.is_empty() && v.iter().all(|g| *g > 0.0 && g.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("step sizes must be positive: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmijoConfig {
    /// Sufficient-decrease constant in (0, 1).
    pub c: f64,
    /// Backtracking factor in (0, 1).
    pub beta: f64,
    pub gamma_max: f64,
    pub gamma_min: f64,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        Self {
            c: 0.5,
            beta: 0.5,
            gamma_max: 1.0,
            gamma_min: 1e-10,
        }
    }
}

impl ArmijoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c > 0.0
            && self.c < 1.0
            && self.beta > 0.0
            && self.beta < 1.0
            && self.gamma_min > 0.0
            && self.gamma_min < self.gamma_max
            && self.gamma_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid Armijo configuration {self:?}")))
        }
    }

    /// Whether `γ_max` lies below `2(1−c)/L`, the window in which clean
    /// acceptance carries over to contaminated objectives.
    pub fn within_stability_window(&self, smoothness: f64) -> bool {
        self.gamma_max < 2.0 * (1.0 - self.c) / smoothness
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Protocol {
    Fixed { steps: StepRule },
    Armijo { config: ArmijoConfig },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIter,
    GradTol,
    ProjectionFailure,
    LineSearchFailure,
    /// The objective or an iterate stopped being finite.
    NonFinite,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxIter => "max-iter",
            StopReason::GradTol => "grad-tol",
            StopReason::ProjectionFailure => "projection-failure",
            StopReason::LineSearchFailure => "line-search-failure",
            StopReason::NonFinite => "non-finite",
        }
    }

    /// Whether the run ended abnormally.
    pub fn is_failure(self) -> bool {
        matches!(
            self,
            StopReason::ProjectionFailure | StopReason::LineSearchFailure | StopReason::NonFinite
        )
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            StopReason::MaxIter,
            StopReason::GradTol,
            StopReason::ProjectionFailure,
            StopReason::LineSearchFailure,
            StopReason::NonFinite,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| invalid(format!("unknown stop reason {s:?}")))
    }
}

/// Every iterate of a descent run. `gradients` hold `∇_θ D`; `steps[k]` is
/// the step taken from iterate `k` to `k+1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimPath {
    pub protocol: Protocol,
    pub iterates: Vec<Vec<f64>>,
    pub gradients: Vec<Vec<f64>>,
    pub objective: Vec<f64>,
    pub steps: Vec<f64>,
    /// Iterations whose update was clamped back into the admissible set.
    pub projections: Vec<usize>,
    pub stop_reason: StopReason,
}

impl OptimPath {
    fn start(protocol: Protocol) -> Self {
        Self {
            protocol,
            iterates: Vec::new(),
            gradients: Vec::new(),
            objective: Vec::new(),
            steps: Vec::new(),
            projections: Vec::new(),
            stop_reason: StopReason::MaxIter,
        }
    }

    pub fn last(&self) -> &[f64] {
        self.iterates.last().expect("a path always holds the initial point")
    }

    /// Number of updates performed.
    pub fn iterations(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn final_grad_norm(&self) -> f64 {
        norm(self.gradients.last().expect("nonempty"))
    }

    /// Accepted steps violating `f(θ_{k+1}) ≤ f(θ_k) − cγ_k‖∇f(θ_k)‖²`.
    pub fn armijo_violations(&self, c: f64) -> usize {
        (0..self.steps.len())
            .filter(|&k| {
                let g2: f64 = self.gradients[k].iter().map(|x| x * x).sum();
                self.objective[k + 1] > self.objective[k] - c * self.steps[k] * g2
            })
            .count()
    }

    /// Whether the stored gradients match a fresh evaluation.
    pub fn max_gradient_drift(&self, objective: &Objective) -> Result<f64> {
        let mut worst = 0.0f64;
        for (t, g) in self.iterates.iter().zip(&self.gradients) {
            let fresh = objective.gradient(t)?;
            for (a, b) in fresh.iter().zip(g) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

/// Evaluates the objective at θ, recording the point. Returns `None` and
/// sets `NonFinite` if the evaluation fails.
fn record(path: &mut OptimPath, objective: &Objective, theta: &[f64]) -> Option<Vec<f64>> {
    match objective.value_and_gradient(theta) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => {
            path.iterates.push(theta.to_vec());
            path.objective.push(v);
            path.gradients.push(g.clone());
            Some(g)
        }
        _ => {
            path.stop_reason = StopReason::NonFinite;
            None
        }
    }
}

fn initial_check(theta0: &[f64], objective: &Objective) -> Result<()> {
    check_dim(objective.model().as_ref(), theta0)?;
    objective.model().validate(theta0)?;
    objective.value(theta0).map(|_| ())
}

/// Gradient descent `θ ← θ − γ_m ∇D` with a prescribed step sequence.
///
/// Updates that leave the admissible set are clamped by the model; three
/// consecutive clamps end the run with `ProjectionFailure`.
pub fn gd_fixed(theta0: &[f64], objective: &Objective, steps: &StepRule, stop: StopCriteria) -> Result<OptimPath> {
    steps.validate()?;
    initial_check(theta0, objective)?;
    let mut path = OptimPath::start(Protocol::Fixed { steps: steps.clone() });
    let mut theta = theta0.to_vec();
    let mut clamps = 0;
    for m in 0..=stop.max_iter {
        let Some(g) = record(&mut path, objective, &theta) else {
            break;
        };
        if norm(&g) < stop.grad_tol {
            path.stop_reason = StopReason::GradTol;
            break;
        }
        if m == stop.max_iter {
            path.stop_reason = StopReason::MaxIter;
            break;
        }
        let gamma = steps.at(m);
        let mut next: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - gamma * gi).collect();
        if next.iter().any(|t| !t.is_finite()) {
            path.stop_reason = StopReason::NonFinite;
            break;
        }
        if objective.model().project(&mut next) {
            path.projections.push(m);
            clamps += 1;
        } else {
            clamps = 0;
        }
        if clamps >= MAX_CONSECUTIVE_CLAMPS || objective.model().validate(&next).is_err() {
            path.stop_reason = StopReason::ProjectionFailure;
            break;
        }
        path.steps.push(gamma);
        theta = next;
    }
    Ok(path)
}

/// Gradient descent with Armijo backtracking from `γ_max` by factor `β`.
pub fn gd_armijo(
    theta0: &[f64],
    objective: &Objective,
    config: &ArmijoConfig,
    stop: StopCriteria,
) -> Result<OptimPath> {
    config.validate()?;
    initial_check(theta0, objective)?;
    let mut path = OptimPath::start(Protocol::Armijo { config: *config });
    let mut theta = theta0.to_vec();
    for m in 0..=stop.max_iter {
        let Some(g) = record(&mut path, objective, &theta) else {
            break;
        };
        let g2: f64 = g.iter().map(|x| x * x).sum();
        if g2.sqrt() < stop.grad_tol {
            path.stop_reason = StopReason::GradTol;
            break;
        }
        if m == stop.max_iter {
            path.stop_reason = StopReason::MaxIter;
            break;
        }
        let current = *path.objective.last().expect("recorded");
        let mut gamma = config.gamma_max;
        let accepted = loop {
            let trial: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - gamma * gi).collect();
            if let Ok(v) = objective.value(&trial) {
                if v.is_finite() && v <= current - config.c * gamma * g2 {
                    break Some(trial);
                }
            }
            gamma *= config.beta;
            if gamma < config.gamma_min {
                break None;
            }
        };
        match accepted {
            // the sufficient-decrease test passes vacuously once the step
            // no longer changes θ in floating point
            Some(next) if next == theta => {
                path.stop_reason = StopReason::LineSearchFailure;
                break;
            }
            Some(next) => {
                path.steps.push(gamma);
                theta = next;
            }
            None => {
                path.stop_reason = StopReason::LineSearchFailure;
                break;
            }
        }
    }
    Ok(path)
}

/// `max_{k ≤ m} ‖a_k − b_k‖` for two paths with the same start and protocol.
pub fn path_distance(a: &OptimPath, b: &OptimPath, upto: usize) -> Result<f64> {
    if a.protocol != b.protocol {
        return Err(invalid("paths were produced by different step protocols"));
    }
    if a.iterates.first() != b.iterates.first() {
        return Err(invalid("paths start from different initial points"));
    }
    if upto >= a.iterates.len() || upto >= b.iterates.len() {
        return Err(invalid(format!(
            "iteration {upto} exceeds path lengths {} / {}",
            a.iterates.len(),
            b.iterates.len()
        )));
    }
    Ok((0..=upto)
        .map(|k| {
            a.iterates[k]
                .iter()
                .zip(&b.iterates[k])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// Itakura–Saito instability probe

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub omega: f64,
    pub z_ladder: Vec<f64>,
    /// First step size γ₁.
    pub step: f64,
    /// Coordinate box around θ₀ on which `‖∇log S/S(ω*)‖` must stay
    /// positive.
    pub check_box: Vec<(f64, f64)>,
    pub check_points: usize,
    /// Solver used to reach the contaminated stationary points.
    pub armijo: ArmijoConfig,
    pub stationary_stop: StopCriteria,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstStepRow {
    pub z: f64,
    pub distance: f64,
    pub closed_form: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryRow {
    pub z: f64,
    pub theta: Vec<f64>,
    pub stop_reason: StopReason,
    /// `‖∇D_1[Ĩ^z : S_θ]‖` at the reached point.
    pub contaminated_grad_norm: f64,
    /// `‖∇D_1[Ĩ : S_θ]‖` at the same point.
    pub clean_grad_norm: f64,
    /// `z·m/n·‖∇log S_θ(ω*)/S_θ(ω*)‖` at the same point.
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstabilityReport {
    pub applicable: bool,
    /// Smallest `‖∇log S/S(ω*)‖` over the check lattice.
    pub min_sensitivity: f64,
    pub multiplicity: usize,
    pub first_step: Vec<FirstStepRow>,
    pub stationary: Vec<StationaryRow>,
    /// R² of the least-squares line of clean gradient norm against z.
    pub stationary_r2: f64,
}

/// First-step and stationary-point sensitivity of Itakura–Saito descent to
/// pilot contamination at ±ω*.
pub fn is_instability_probe(theta0: &[f64], clean: &Objective, config: &ProbeConfig) -> Result<InstabilityReport> {
    if !clean.spec().is_itakura_saito() {
        return Err(invalid("the instability probe needs an Itakura–Saito objective"));
    }
    let model = clean.model().clone();
    let grid = clean.pilot().grid().clone();
    let i = grid
        .index_of(config.omega)
        .ok_or_else(|| invalid(format!("ω* = {} is not on the grid", config.omega)))?;
    let mirror = grid.mirror_index(i);
    let multiplicity = [i, mirror]
        .iter()
        .enumerate()
        .filter(|&(k, &j)| (k == 0 || j != i) && grid.is_included(j))
        .count();
    let omega = grid.freqs()[i];
    let sensitivity = |theta: &[f64]| {
        let (s, g) = model.density_and_grad(theta, omega);
        norm(&g[..model.dim()]) / s
    };

    let min_sensitivity = lattice(&config.check_box, config.check_points)?
        .iter()
        .filter(|t| model.validate(t).is_ok())
        .map(|t| sensitivity(t))
        .fold(f64::INFINITY, f64::min);
    let applicable = multiplicity > 0 && min_sensitivity > 0.0 && min_sensitivity.is_finite();
    let mut report = InstabilityReport {
        applicable,
        min_sensitivity,
        multiplicity,
        first_step: Vec::new(),
        stationary: Vec::new(),
        stationary_r2: f64::NAN,
    };
    if !applicable {
        return Ok(report);
    }

    let n_eff = clean.n_eff() as f64;
    let one_step = StopCriteria {
        max_iter: 1,
        grad_tol: 0.0,
    };
    let steps = StepRule::Constant(config.step);
    let base = gd_fixed(theta0, clean, &steps, one_step)?;
    for &z in &config.z_ladder {
        let contaminated = clean.with_pilot(&crate::sampling::contaminate_pilot(clean.pilot(), omega, z)?)?;
        let path = gd_fixed(theta0, &contaminated, &steps, one_step)?;
        let distance = path_distance(&base, &path, 1)?;
        let closed_form = config.step * z * multiplicity as f64 / n_eff * sensitivity(theta0);
        report.first_step.push(FirstStepRow {
            z,
            distance,
            closed_form,
        });

        let run = gd_armijo(theta0, &contaminated, &config.armijo, config.stationary_stop)?;
        let theta = run.last().to_vec();
        let contaminated_grad_norm = run.final_grad_norm();
        let clean_grad_norm = norm(&clean.gradient(&theta)?);
        let predicted = z * multiplicity as f64 / n_eff * sensitivity(&theta);
        report.stationary.push(StationaryRow {
            z,
            theta,
            stop_reason: run.stop_reason,
            contaminated_grad_norm,
            clean_grad_norm,
            predicted,
        });
    }
    let xs: Vec<f64> = report.stationary.iter().map(|r| r.z).collect();
    let ys: Vec<f64> = report.stationary.iter().map(|r| r.clean_grad_norm).collect();
    report.stationary_r2 = linear_fit(&xs, &ys).map(|f| f.r2).unwrap_or(f64::NAN);
    Ok(report)
}

fn lattice(bounds: &[(f64, f64)], points: usize) -> Result<Vec<Vec<f64>>> {
    if points < 2 || bounds.is_empty() {
        return Err(invalid("check lattice needs a box and at least two points per axis"));
    }
    let total = points.pow(bounds.len() as u32);
    Ok((0..total)
        .map(|flat| {
            let mut rem = flat;
            bounds
                .iter()
                .map(|&(lo, hi)| {
                    let k = rem % points;
                    rem /= points;
                    lo + (hi - lo) * k as f64 / (points - 1) as f64
                })
                .collect()
        })
        .collect())
}

/// Least-squares line `y = a + b x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { intercept, slope, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Ar1Model, Ar1Params, ModelSpectrum};
    use crate::spectral::FreqGrid;

    fn ar1_pilot(n: usize, sigma: f64, rho: f64) -> SpectrumSamples {
        let theta = Ar1Params::from_natural(sigma, rho).unwrap().to_vec();
        let grid = FreqGrid::new(n, true).unwrap();
        SpectrumSamples::from_spectrum(grid, &ModelSpectrum::new(&Ar1Model, &theta).unwrap()).unwrap()
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(smoothness_bound(1.0, 1.0, 0.5).unwrap(), 4.0);
        assert_eq!(smoothness_bound(2.0, 1.0, 0.75).unwrap(), 20.0);
        assert!(smoothness_bound(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn gradient_vanishes_at_truth() {
        let theta = Ar1Params::from_natural(1.3, -0.4).unwrap().to_vec();
        let pilot = ar1_pilot(128, 1.3, -0.4);
        for alpha in [0.5, 1.0] {
            let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::new(alpha).unwrap()).unwrap();
            let g = obj.gradient(&theta).unwrap();
            assert!(norm(&g) < 1e-12, "{g:?}");
        }
    }

    #[test]
    fn path_stops_immediately_at_truth() {
        let theta = Ar1Params::from_natural(1.0, 0.5).unwrap().to_vec();
        let pilot = ar1_pilot(64, 1.0, 0.5);
        let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::new(0.5).unwrap()).unwrap();
        let p = gd_fixed(&theta, &obj, &StepRule::Constant(0.01), StopCriteria::default()).unwrap();
        assert_eq!(p.stop_reason, StopReason::GradTol);
        assert_eq!(p.iterations(), 0);
    }

    #[test]
    fn renyi_vs_is_gradient_guards() {
        let pilot = ar1_pilot(32, 1.0, 0.2);
        let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::new(0.5).unwrap()).unwrap();
        assert!(is_gradient(&[0.0, 0.0], &obj).is_err());
        assert!(renyi_gradient(&[0.0, 0.0], &obj).is_ok());
        assert!(renyi_gradient(&[0.0], &obj).is_err());
    }

    #[test]
    fn path_distance_guards() {
        let pilot = ar1_pilot(32, 1.0, 0.2);
        let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::new(0.5).unwrap()).unwrap();
        let stop = StopCriteria {
            max_iter: 5,
            grad_tol: 0.0,
        };
        let a = gd_fixed(&[0.3, 0.1], &obj, &StepRule::Constant(0.1), stop).unwrap();
        let b = gd_fixed(&[0.3, 0.1], &obj, &StepRule::Constant(0.2), stop).unwrap();
        let c = gd_fixed(&[0.2, 0.1], &obj, &StepRule::Constant(0.1), stop).unwrap();
        assert_eq!(path_distance(&a, &a, 5).unwrap(), 0.0);
        assert!(path_distance(&a, &b, 5).is_err());
        assert!(path_distance(&a, &c, 5).is_err());
        assert!(path_distance(&a, &a, 6).is_err());
    }

    #[test]
    fn linear_fit_exact_line() {
        let f = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }
}
