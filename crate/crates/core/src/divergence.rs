//! Spectral α-Rényi and Itakura–Saito divergences.
//!
//! Argument order follows `D[S : S̃]`: the first slot is the pilot
//! (nonparametric) spectrum and the second the model, so that
//!
//! ```text
//! D_α[S : S̃] = 1/(1−α) · mean[ log(αS̃ + (1−α)S) − α log S̃ − (1−α) log S ]
//! D_1[S : S̃] = mean[ S/S̃ − 1 + log(S̃/S) ]
//! ```
//!
//! Discrete versions average over the included frequencies of the grid, so
//! with ω = 0 excluded the normaliser is `n − 1`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::linalg::{log_det_spd, toeplitz, DENSE_CAP};
use crate::spectral::{autocovariance_with, periodic_mean, Spectrum, SpectrumSamples, CONTINUOUS_QUADRATURE_POINTS};

/// Default relative floor applied to the pilot before taking logs.
pub const DEFAULT_FLOOR: f64 = 1e-12;

/// Order and frequency policy of a divergence evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub exclude_zero: bool,
    /// Pilot values are clamped below at `floor · mean(pilot)`; `None`
    /// disables the clamp.
    #[serde(default = "default_floor")]
    pub floor: Option<f64>,
}

fn default_true() -> bool {
    true
}

fn default_floor() -> Option<f64> {
    Some(DEFAULT_FLOOR)
}

impl DivergenceSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        let s = Self {
            alpha,
            exclude_zero: true,
            floor: Some(DEFAULT_FLOOR),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn itakura_saito() -> Self {
        Self::new(1.0).expect("α = 1 is valid")
    }

    pub fn with_exclude_zero(mut self, exclude_zero: bool) -> Self {
        self.exclude_zero = exclude_zero;
        self
    }

    pub fn with_floor(mut self, floor: Option<f64>) -> Self {
        self.floor = floor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(format!("α must lie in (0, 1], got {}", self.alpha)));
        }
        if let Some(f) = self.floor {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(invalid(format!("floor must be nonnegative, got {f}")));
            }
        }
        Ok(())
    }

    /// α = 1 dispatches to the Itakura–Saito branch.
    pub fn is_itakura_saito(&self) -> bool {
        self.alpha == 1.0
    }

    /// The pilot after the floor policy.
    pub fn apply_floor(&self, pilot: &SpectrumSamples) -> SpectrumSamples {
        match self.floor {
            Some(f) if f > 0.0 => pilot.floored(f),
            _ => pilot.clone(),
        }
    }
}

/// Per-frequency Rényi integrand, written through the ratio `r = S̃/S`.
#[inline]
pub fn renyi_term(alpha: f64, s: f64, s_tilde: f64) -> f64 {
    let r = s_tilde / s;
    ((alpha * (r - 1.0)).ln_1p() - alpha * r.ln()) / (1.0 - alpha)
}

/// Per-frequency Itakura–Saito integrand `S/S̃ − 1 + log(S̃/S)`.
#[inline]
pub fn itakura_saito_term(s: f64, s_tilde: f64) -> f64 {
    let r = s_tilde / s;
    1.0 / r - 1.0 + r.ln()
}

/// Integrand for order α, dispatching α = 1 to Itakura–Saito.
#[inline]
pub fn divergence_term(alpha: f64, s: f64, s_tilde: f64) -> f64 {
    if alpha == 1.0 {
        itakura_saito_term(s, s_tilde)
    } else {
        renyi_term(alpha, s, s_tilde)
    }
}

/// Validated, floored pilot/model pair on a common grid.
fn prepared<'a>(
    pilot: &SpectrumSamples,
    model: &'a SpectrumSamples,
    spec: &DivergenceSpec,
) -> Result<(SpectrumSamples, &'a SpectrumSamples, Vec<usize>)> {
    spec.validate()?;
    if !pilot.grid().same_frequencies(model.grid()) {
        return Err(invalid(format!(
            "grid mismatch: pilot has n = {}, model has n = {}",
            pilot.grid().n(),
            model.grid().n()
        )));
    }
    let pilot = spec.apply_floor(pilot).with_exclude_zero(spec.exclude_zero);
    let idx: Vec<usize> = pilot.grid().included_indices().collect();
    for &i in &idx {
        let (a, b) = (pilot.values()[i], model.values()[i]);
        if !(a > 0.0) || !(b > 0.0) {
            return Err(domain(format!(
                "nonpositive spectrum at ω = {} (pilot {a}, model {b})",
                pilot.grid().freqs()[i]
            )));
        }
    }
    Ok((pilot, model, idx))
}

/// Discrete divergence of order α ∈ (0, 1] between a pilot and a model.
pub fn divergence_discrete(pilot: &SpectrumSamples, model: &SpectrumSamples, spec: &DivergenceSpec) -> Result<f64> {
    let (pilot, model, idx) = prepared(pilot, model, spec)?;
    let sum: f64 = idx
        .iter()
        .map(|&i| divergence_term(spec.alpha, pilot.values()[i], model.values()[i]))
        .sum();
    Ok(sum / idx.len() as f64)
}

/// Discrete spectral Rényi divergence `D_α^(n)[pilot : model]`.
pub fn renyi_discrete(pilot: &SpectrumSamples, model: &SpectrumSamples, spec: &DivergenceSpec) -> Result<f64> {
    divergence_discrete(pilot, model, spec)
}

/// Discrete Itakura–Saito divergence `D_1^(n)[pilot : model]`; the order in
/// `spec` is ignored.
pub fn itakura_saito_discrete(pilot: &SpectrumSamples, model: &SpectrumSamples, spec: &DivergenceSpec) -> Result<f64> {
    let spec = DivergenceSpec { alpha: 1.0, ..*spec };
    divergence_discrete(pilot, model, &spec)
}

/// `D_α[S : S̃]` by periodic quadrature on `points` midpoint nodes.
pub fn renyi_continuous(s: &dyn Spectrum, s_tilde: &dyn Spectrum, alpha: f64, points: usize) -> Result<f64> {
    if points < 16 {
        return Err(invalid(format!("quadrature order must be at least 16, got {points}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("α must lie in (0, 1], got {alpha}")));
    }
    let mut bad = None;
    let v = periodic_mean(points, |w| {
        let (a, b) = (s.density(w), s_tilde.density(w));
        if !(a > 0.0 && b > 0.0) {
            bad.get_or_insert(w);
            return 0.0;
        }
        divergence_term(alpha, a, b)
    });
    match bad {
        Some(w) => Err(domain(format!("nonpositive spectrum at ω = {w}"))),
        None => Ok(v),
    }
}

/// [`renyi_continuous`] on the default 2¹⁴-node grid.
pub fn renyi_continuous_default(s: &dyn Spectrum, s_tilde: &dyn Spectrum, alpha: f64) -> Result<f64> {
    renyi_continuous(s, s_tilde, alpha, CONTINUOUS_QUADRATURE_POINTS)
}

// ---------------------------------------------------------------------------
// Variational representations

/// Closed-form minimiser and the objective value attained there.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalResult {
    pub minimizer: SpectrumSamples,
    pub objective: f64,
}

fn check_open_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("variational forms need α ∈ (0, 1), got {alpha}")));
    }
    Ok(())
}

fn combine(a: &SpectrumSamples, b: &SpectrumSamples, f: impl Fn(f64, f64) -> f64) -> Result<SpectrumSamples> {
    if !a.grid().same_frequencies(b.grid()) {
        return Err(invalid("grid mismatch"));
    }
    let v = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
    SpectrumSamples::new(a.grid().clone(), v)
}

/// `(1/(1−α)) {α D_1[S̃ : S'] + (1−α) D_1[S : S']}`.
pub fn primal_objective(
    s: &SpectrumSamples,
    s_tilde: &SpectrumSamples,
    candidate: &SpectrumSamples,
    alpha: f64,
    spec: &DivergenceSpec,
) -> Result<f64> {
    check_open_alpha(alpha)?;
    let a = itakura_saito_discrete(s_tilde, candidate, spec)?;
    let b = itakura_saito_discrete(s, candidate, spec)?;
    Ok((alpha * a + (1.0 - alpha) * b) / (1.0 - alpha))
}

/// `(1/(1−α)) {α D_1[S' : S] + (1−α) D_1[S' : S̃]}`.
pub fn dual_objective(
    s: &SpectrumSamples,
    s_tilde: &SpectrumSamples,
    candidate: &SpectrumSamples,
    alpha: f64,
    spec: &DivergenceSpec,
) -> Result<f64> {
    check_open_alpha(alpha)?;
    let a = itakura_saito_discrete(candidate, s, spec)?;
    let b = itakura_saito_discrete(candidate, s_tilde, spec)?;
    Ok((alpha * a + (1.0 - alpha) * b) / (1.0 - alpha))
}

/// Primal form, minimised by the arithmetic mixture `αS̃ + (1−α)S`.
pub fn variational_primal(
    s: &SpectrumSamples,
    s_tilde: &SpectrumSamples,
    alpha: f64,
    spec: &DivergenceSpec,
) -> Result<VariationalResult> {
    check_open_alpha(alpha)?;
    let minimizer = combine(s, s_tilde, |a, b| alpha * b + (1.0 - alpha) * a)?;
    let objective = primal_objective(s, s_tilde, &minimizer, alpha, spec)?;
    Ok(VariationalResult { minimizer, objective })
}

/// Dual form, minimised by the harmonic mixture `(αS⁻¹ + (1−α)S̃⁻¹)⁻¹`.
pub fn variational_dual(
    s: &SpectrumSamples,
    s_tilde: &SpectrumSamples,
    alpha: f64,
    spec: &DivergenceSpec,
) -> Result<VariationalResult> {
    check_open_alpha(alpha)?;
    let minimizer = combine(s, s_tilde, |a, b| {
        if a > 0.0 && b > 0.0 {
            1.0 / (alpha / a + (1.0 - alpha) / b)
        } else {
            0.0
        }
    })?;
    let objective = dual_objective(s, s_tilde, &minimizer, alpha, spec)?;
    Ok(VariationalResult { minimizer, objective })
}

// ---------------------------------------------------------------------------
// Finite-n Gaussian oracles

/// Log-determinants of `Σ_n(S)` for a family of spectra.
fn toeplitz_log_dets(spectra: &[&dyn Spectrum], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("matrix order must be at least 1"));
    }
    if n > DENSE_CAP {
        return Err(crate::Error::Capability(format!(
            "order {n} exceeds the dense solver cap {DENSE_CAP}"
        )));
    }
    let points = (8 * n).max(CONTINUOUS_QUADRATURE_POINTS);
    spectra
        .iter()
        .map(|s| {
            let acov = autocovariance_with(*s, n - 1, points)?;
            log_det_spd(&toeplitz(&acov, n)?)
        })
        .collect()
}

/// Rényi divergence between the order-`n` Gaussian laws of two stationary
/// processes:
/// `1/(2(1−α)) · log[det(αΣ̃ + (1−α)Σ) / (det Σ^{1−α} det Σ̃^α)]`.
pub fn gaussian_renyi_finite(s: &dyn Spectrum, s_tilde: &dyn Spectrum, alpha: f64, n: usize) -> Result<f64> {
    check_open_alpha(alpha)?;
    let mix = |w: f64| alpha * s_tilde.density(w) + (1.0 - alpha) * s.density(w);
    let ld = toeplitz_log_dets(&[&mix, s, s_tilde], n)?;
    Ok((ld[0] - (1.0 - alpha) * ld[1] - alpha * ld[2]) / (2.0 * (1.0 - alpha)))
}

/// γ-divergence between the order-`n` Gaussian laws:
/// `D = (1/(2γ)) [log det Σ(S̄) − γ/(1+γ) log det Σ(S) − 1/(1+γ) log det Σ(S̃)]`
/// with `S̄ = γ/(1+γ) S + 1/(1+γ) S̃`.
pub fn gaussian_gamma_finite(s: &dyn Spectrum, s_tilde: &dyn Spectrum, gamma: f64, n: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("γ must be positive, got {gamma}")));
    }
    let a = gamma / (1.0 + gamma);
    let b = 1.0 / (1.0 + gamma);
    let mix = |w: f64| a * s.density(w) + b * s_tilde.density(w);
    let ld = toeplitz_log_dets(&[&mix, s, s_tilde], n)?;
    Ok((ld[0] - a * ld[1] - b * ld[2]) / (2.0 * gamma))
}

// ---------------------------------------------------------------------------
// Contamination shifts

/// Change of the discrete divergence when the pilot gains mass `z` at ±ω*.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// Number of included grid entries touched (2 off the axis points, 1 at
    /// 0 or π, 0 if ω* is excluded).
    pub multiplicity: usize,
    /// Exact difference of the divergences.
    pub exact: f64,
    /// Leading-order form: `m(z/S − log z)/n` for Itakura–Saito and
    /// `m·α·log z/n` for Rényi.
    pub predicted: f64,
    /// Large-z expansion of the exact difference with all O(1) terms kept;
    /// `exact − asymptotic = O(1/z)`.
    pub asymptotic: f64,
}

/// Exact and predicted shifts of `D[pilot : S_θ]` under contamination of the
/// pilot at ±ω*. `model_value` is `S_θ(ω*)`.
pub fn contamination_shift(
    pilot: &SpectrumSamples,
    model_value: f64,
    omega: f64,
    z: f64,
    spec: &DivergenceSpec,
) -> Result<ShiftReport> {
    spec.validate()?;
    if !(z >= 0.0 && z.is_finite()) {
        return Err(invalid(format!("contamination mass must be nonnegative, got {z}")));
    }
    if !(model_value > 0.0) {
        return Err(domain(format!("model value at ω* must be positive, got {model_value}")));
    }
    let floored = spec.apply_floor(pilot).with_exclude_zero(spec.exclude_zero);
    let grid = floored.grid();
    let i = grid
        .index_of(omega)
        .ok_or_else(|| invalid(format!("ω* = {omega} is not a grid frequency for n = {}", grid.n())))?;
    let m = grid.mirror_index(i);
    let mut multiplicity = usize::from(grid.is_included(i));
    if m != i && grid.is_included(m) {
        multiplicity += 1;
    }
    let n_eff = grid.included_count() as f64;
    let clean = floored.values()[i];
    if !(clean > 0.0) {
        return Err(domain(format!("pilot at ω* must be positive, got {clean}")));
    }
    let mult = multiplicity as f64;
    let alpha = spec.alpha;
    let s = model_value;
    let per_freq = divergence_term(alpha, clean + z, s) - divergence_term(alpha, clean, s);
    let exact = mult * per_freq / n_eff;
    let (predicted, asymptotic) = if spec.is_itakura_saito() {
        (
            mult * (z / s - z.ln()) / n_eff,
            mult * (z / s - z.ln() + clean.ln()) / n_eff,
        )
    } else {
        let a = ((1.0 - alpha).ln() + alpha * z.ln() - (alpha * s + (1.0 - alpha) * clean).ln()
            + (1.0 - alpha) * clean.ln())
            / (1.0 - alpha);
        (mult * alpha * z.ln() / n_eff, mult * a / n_eff)
    };
    Ok(ShiftReport {
        multiplicity,
        exact,
        predicted,
        asymptotic,
    })
}
