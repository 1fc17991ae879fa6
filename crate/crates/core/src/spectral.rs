//! Frequency grids, tabulated spectra and the basic spectral functionals
//! (innovation variance, autocovariances) shared by the rest of the crate.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

/// Number of nodes used for "continuous" quadratures.
pub const CONTINUOUS_QUADRATURE_POINTS: usize = 1 << 14;

/// Minimum size of the internal grid used for autocovariance quadrature.
pub const MIN_AUTOCOV_POINTS: usize = 4096;

const GRID_MATCH_TOL: f64 = 1e-9;

/// Anything that can be evaluated as a spectral density on `[-π, π]`.
pub trait Spectrum: Sync {
    fn density(&self, omega: f64) -> f64;
}

impl<F> Spectrum for F
where
    F: Fn(f64) -> f64 + Sync,
{
    fn density(&self, omega: f64) -> f64 {
        self(omega)
    }
}

/// The Fourier frequencies `2πt/n` for `t = -⌈n/2⌉+1, …, ⌊n/2⌋`.
///
/// The grid always stores ω = 0; `exclude_zero` only tells downstream sums
/// to skip it.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqGrid {
    n: usize,
    freqs: Arc<[f64]>,
    exclude_zero: bool,
}

impl FreqGrid {
    pub fn new(n: usize, exclude_zero: bool) -> Result<Self> {
        if n == 0 {
            return Err(invalid("grid length must be at least 1"));
        }
        let offset = zero_offset(n);
        let freqs: Arc<[f64]> = (0..n)
            .map(|i| 2.0 * PI * (i as f64 - offset as f64) / n as f64)
            .collect();
        Ok(Self { n, freqs, exclude_zero })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn exclude_zero(&self) -> bool {
        self.exclude_zero
    }

    /// Same frequencies under a different zero-frequency policy.
    pub fn with_exclude_zero(&self, exclude_zero: bool) -> Self {
        Self {
            exclude_zero,
            ..self.clone()
        }
    }

    /// Index of ω = 0.
    pub fn zero_index(&self) -> usize {
        zero_offset(self.n)
    }

    /// Integer `t` with `freqs[i] = 2πt/n`.
    pub fn harmonic(&self, i: usize) -> i64 {
        i as i64 - self.zero_index() as i64
    }

    /// Index of `-freqs[i]`; ω = 0 and ω = π map to themselves.
    pub fn mirror_index(&self, i: usize) -> usize {
        let t = self.harmonic(i);
        let lo = -(self.zero_index() as i64);
        let hi = (self.n / 2) as i64;
        let m = -t;
        if m < lo || m > hi {
            i
        } else {
            (m + self.zero_index() as i64) as usize
        }
    }

    /// Index of ω when it coincides (mod 2π) with a grid frequency.
    pub fn index_of(&self, omega: f64) -> Option<usize> {
        if !omega.is_finite() {
            return None;
        }
        let scaled = omega * self.n as f64 / (2.0 * PI);
        let t = scaled.round();
        if (scaled - t).abs() > GRID_MATCH_TOL * scaled.abs().max(1.0) {
            return None;
        }
        let n = self.n as i64;
        let lo = -(self.zero_index() as i64);
        let mut t = (t as i64).rem_euclid(n);
        if t > (self.n / 2) as i64 {
            t -= n;
        }
        debug_assert!(t >= lo);
        Some((t - lo) as usize)
    }

    /// Whether the frequency at index `i` participates in divergence sums.
    pub fn is_included(&self, i: usize) -> bool {
        !(self.exclude_zero && i == self.zero_index())
    }

    pub fn included_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.is_included(i))
    }

    /// Number of frequencies entering divergence sums.
    pub fn included_count(&self) -> usize {
        if self.exclude_zero {
            self.n - 1
        } else {
            self.n
        }
    }

    /// Number of grid entries touched by contaminating ±ω at index `i`.
    pub fn multiplicity(&self, i: usize) -> usize {
        if self.mirror_index(i) == i {
            1
        } else {
            2
        }
    }

    /// Position of grid index `i` in FFT (k = t mod n) order.
    pub(crate) fn fft_bin(&self, i: usize) -> usize {
        self.harmonic(i).rem_euclid(self.n as i64) as usize
    }

    pub(crate) fn same_frequencies(&self, other: &FreqGrid) -> bool {
        self.n == other.n
    }
}

fn zero_offset(n: usize) -> usize {
    n.div_ceil(2) - 1
}

/// A nonnegative even spectrum tabulated on a [`FreqGrid`], in power per
/// radian.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSamples {
    grid: FreqGrid,
    values: Vec<f64>,
}

impl SpectrumSamples {
    /// Validates length, finiteness, nonnegativity and even symmetry.
    pub fn new(grid: FreqGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(invalid(format!(
                "expected {} spectrum values, got {}",
                grid.n(),
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(domain(format!(
                    "spectrum value {v} at ω = {} is not a finite nonnegative number",
                    grid.freqs()[i]
                )));
            }
            let m = grid.mirror_index(i);
            let w = values[m];
            if (v - w).abs() > 1e-10 * v.abs().max(w.abs()).max(f64::MIN_POSITIVE) {
                return Err(domain(format!(
                    "spectrum is not even: S({}) = {v} but S({}) = {w}",
                    grid.freqs()[i],
                    grid.freqs()[m]
                )));
            }
        }
        Ok(Self { grid, values })
    }

    /// Tabulates an evaluable spectrum. Only nonnegative frequencies are
    /// evaluated; the negative half is mirrored so evenness is exact.
    pub fn from_spectrum(grid: FreqGrid, spectrum: &dyn Spectrum) -> Result<Self> {
        let mut values = vec![0.0; grid.n()];
        for i in 0..grid.n() {
            let m = grid.mirror_index(i);
            if grid.freqs()[i] >= 0.0 {
                let v = spectrum.density(grid.freqs()[i]);
                values[i] = v;
                values[m] = v;
            }
        }
        Self::new(grid, values)
    }

    pub fn constant(grid: FreqGrid, value: f64) -> Result<Self> {
        let n = grid.n();
        Self::new(grid, vec![value; n])
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_raw(grid: FreqGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.n(), values.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &FreqGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at a grid frequency.
    pub fn at(&self, omega: f64) -> Option<f64> {
        self.grid.index_of(omega).map(|i| self.values[i])
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Multiplies every value by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::from_raw(self.grid.clone(), self.values.iter().map(|v| v * c).collect())
    }

    /// Same values under a different zero-frequency policy.
    pub fn with_exclude_zero(&self, exclude_zero: bool) -> Self {
        Self::from_raw(self.grid.with_exclude_zero(exclude_zero), self.values.clone())
    }

    /// Clamps values below at `relative · mean`.
    pub fn floored(&self, relative: f64) -> Self {
        let floor = relative * self.mean();
        Self::from_raw(self.grid.clone(), self.values.iter().map(|&v| v.max(floor)).collect())
    }

    /// Values reordered so that index `k` holds `S(2πk/n)`.
    pub(crate) fn fft_ordered(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, &v) in self.values.iter().enumerate() {
            out[self.grid.fft_bin(i)] = v;
        }
        out
    }
}

/// One-step prediction error variance `exp((1/2π)∫ log S)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnovationVariance(f64);

impl InnovationVariance {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Riemann-sum innovation variance over the included grid frequencies.
pub fn innovation_variance(s: &SpectrumSamples) -> Result<InnovationVariance> {
    let grid = s.grid();
    let mut acc = 0.0;
    for i in grid.included_indices() {
        let v = s.values()[i];
        if v <= 0.0 {
            return Err(domain(format!(
                "innovation variance needs a positive spectrum; S({}) = {v}",
                grid.freqs()[i]
            )));
        }
        acc += v.ln();
    }
    Ok(InnovationVariance((acc / grid.included_count() as f64).exp()))
}

/// Autocovariances `R(0..=max_lag)` of a tabulated spectrum, using the
/// Riemann sum over the spectrum's own grid.
pub fn autocovariance_from_spectrum(s: &SpectrumSamples, max_lag: usize) -> Result<Vec<f64>> {
    let n = s.grid().n();
    if max_lag >= n {
        return Err(invalid(format!(
            "max_lag {max_lag} must be smaller than the grid length {n}"
        )));
    }
    Ok(cosine_transform(&s.fft_ordered(), max_lag))
}

/// Autocovariances of an evaluable spectrum on an internal periodic grid of
/// `points` nodes.
pub fn autocovariance_with(spectrum: &dyn Spectrum, max_lag: usize, points: usize) -> Result<Vec<f64>> {
    if points <= max_lag {
        return Err(invalid(format!(
            "quadrature grid of {points} points cannot resolve lag {max_lag}"
        )));
    }
    let samples: Vec<f64> = (0..points)
        .map(|k| {
            let mut w = 2.0 * PI * k as f64 / points as f64;
            if k > points / 2 {
                w -= 2.0 * PI;
            }
            spectrum.density(w.abs())
        })
        .collect();
    Ok(cosine_transform(&samples, max_lag))
}

/// Autocovariances of an evaluable spectrum on the default refined grid of
/// `max(8·(max_lag+1), 4096)` nodes.
pub fn autocovariance(spectrum: &dyn Spectrum, max_lag: usize) -> Result<Vec<f64>> {
    let points = (8 * (max_lag + 1)).max(MIN_AUTOCOV_POINTS);
    autocovariance_with(spectrum, max_lag, points)
}

/// `(2π/N) Σ_k S(2πk/N) cos(2πkh/N)` for `h = 0..=max_lag`.
fn cosine_transform(fft_ordered: &[f64], max_lag: usize) -> Vec<f64> {
    let n = fft_ordered.len();
    let mut buf: Vec<Complex64> = fft_ordered.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 2.0 * PI / n as f64;
    buf.iter().take(max_lag + 1).map(|c| c.re * scale).collect()
}

/// Mean of `f` over a periodic midpoint grid of `points` nodes on `[-π, π)`,
/// i.e. the composite trapezoid rule for `(1/2π)∫ f` on a grid shifted by
/// half a step so that ω = 0 is never evaluated.
pub fn periodic_mean(points: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = 2.0 * PI / points as f64;
    let mut acc = 0.0;
    for k in 0..points {
        acc += f(-PI + (k as f64 + 0.5) * h);
    }
    acc / points as f64
}
