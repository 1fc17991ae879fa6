//! Gaussian simulation, periodograms, modified Daniell smoothing and
//! frequency-domain contamination.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::linalg::{cholesky_with_jitter, toeplitz, DENSE_CAP};
use crate::spectral::{autocovariance, autocovariance_from_spectrum, FreqGrid, Spectrum, SpectrumSamples};

/// Identifier of the generator behind [`RngStream`], recorded in experiment
/// output.
pub const RNG_ALGORITHM: &str = "chacha20(seed_from_u64, stream=stream_id)";

/// Relative tolerance for negative circulant-embedding eigenvalues.
const EMBEDDING_TOL: f64 = 1e-10;

/// A reproducible random stream: `(seed, stream_id)` fixes the output bit
/// for bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// A real series sampled at unit rate.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid("a time series needs at least two samples"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(domain(format!("non-finite sample {v}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Gaussian simulation

enum Method {
    Circulant { scale: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Dense { factor: DMatrix<f64> },
}

/// Exact sampler for a zero-mean stationary Gaussian series with a given
/// autocovariance. Built once and reused across replications.
pub struct GaussianSampler {
    n: usize,
    method: Method,
}

impl fmt::Debug for GaussianSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianSampler")
            .field("n", &self.n)
            .field("method", &self.method_name())
            .finish()
    }
}

impl GaussianSampler {
    /// Sampler for an evaluable spectrum; autocovariances come from the
    /// refined quadrature grid.
    pub fn new(spectrum: &dyn Spectrum, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid("series length must be at least 2"));
        }
        Self::from_autocovariance(autocovariance(spectrum, n - 1)?)
    }

    /// Sampler for a tabulated spectrum using its own grid's Riemann sums.
    pub fn from_samples(s: &SpectrumSamples, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid("series length must be at least 2"));
        }
        Self::from_autocovariance(autocovariance_from_spectrum(s, n - 1)?)
    }

    /// Circulant embedding when its eigenvalues are nonnegative (up to
    /// `-1e-10·max`), otherwise a dense Cholesky factor of the Toeplitz
    /// covariance.
    pub fn from_autocovariance(acov: Vec<f64>) -> Result<Self> {
        let n = acov.len();
        if n < 2 {
            return Err(invalid("series length must be at least 2"));
        }
        let m = 2 * (n - 1);
        let mut c: Vec<Complex64> = Vec::with_capacity(m);
        c.extend(acov.iter().map(|&r| Complex64::new(r, 0.0)));
        c.extend(acov[1..n - 1].iter().rev().map(|&r| Complex64::new(r, 0.0)));
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m);
        fft.process(&mut c);
        let max = c.iter().fold(0.0f64, |a, z| a.max(z.re));
        let min = c.iter().fold(f64::INFINITY, |a, z| a.min(z.re));
        if max > 0.0 && min >= -EMBEDDING_TOL * max {
            let scale = c.iter().map(|z| (z.re.max(0.0) / m as f64).sqrt()).collect();
            return Ok(Self {
                n,
                method: Method::Circulant { scale, fft },
            });
        }
        if n > DENSE_CAP {
            return Err(Error::Capability(format!(
                "circulant embedding is indefinite and n = {n} exceeds the dense fallback cap {DENSE_CAP}"
            )));
        }
        let factor = cholesky_with_jitter(&toeplitz(&acov, n)?)?;
        Ok(Self {
            n,
            method: Method::Dense { factor },
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            Method::Circulant { .. } => "circulant-embedding",
            Method::Dense { .. } => "dense-cholesky",
        }
    }

    pub fn sample(&self, stream: &RngStream) -> TimeSeries {
        let mut rng = stream.rng();
        let values = match &self.method {
            Method::Circulant { scale, fft } => {
                let mut buf: Vec<Complex64> = scale
                    .iter()
                    .map(|&s| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf.iter().take(self.n).map(|z| z.re).collect()
            }
            Method::Dense { factor } => {
                let z = DVector::from_fn(self.n, |_, _| StandardNormal.sample(&mut rng));
                (factor * z).iter().copied().collect()
            }
        };
        TimeSeries { values }
    }
}

/// One draw of length `n` from the Gaussian process with spectrum `s`.
pub fn simulate_gaussian(s: &dyn Spectrum, n: usize, stream: &RngStream) -> Result<TimeSeries> {
    Ok(GaussianSampler::new(s, n)?.sample(stream))
}

// ---------------------------------------------------------------------------
// Periodogram and smoothing

/// `I_n(ω) = |Σ x_t e^{-itω}|² / (2πn)` on `Ω_n`, after demeaning.
pub fn periodogram(x: &TimeSeries) -> SpectrumSamples {
    periodogram_with(x, true)
}

pub fn periodogram_with(x: &TimeSeries, demean: bool) -> SpectrumSamples {
    let n = x.len();
    let mean = if demean {
        x.values().iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let mut buf: Vec<Complex64> = x.values().iter().map(|&v| Complex64::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let grid = FreqGrid::new(n, true).expect("n >= 2");
    let scale = 1.0 / (2.0 * PI * n as f64);
    let mut values = vec![0.0; n];
    for i in 0..n {
        if grid.harmonic(i) >= 0 {
            let v = buf[grid.fft_bin(i)].norm_sqr() * scale;
            values[i] = v;
            values[grid.mirror_index(i)] = v;
        }
    }
    SpectrumSamples::from_raw(grid, values)
}

/// Weights `w[-M..=M]` (stored from index 0) of the composition of
/// modified Daniell kernels with the given spans.
pub fn daniell_kernel(spans: &[usize]) -> Result<Vec<f64>> {
    let mut kernel = vec![1.0];
    for &m in spans {
        if m == 0 {
            return Err(invalid("Daniell span must be at least 1"));
        }
        let single: Vec<f64> = (0..=2 * m)
            .map(|j| {
                if j == 0 || j == 2 * m {
                    0.25 / m as f64
                } else {
                    0.5 / m as f64
                }
            })
            .collect();
        let mut out = vec![0.0; kernel.len() + single.len() - 1];
        for (i, a) in kernel.iter().enumerate() {
            for (j, b) in single.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        kernel = out;
    }
    Ok(kernel)
}

/// Circular convolution of a tabulated spectrum with composed modified
/// Daniell kernels.
pub fn smooth_daniell(s: &SpectrumSamples, spans: &[usize]) -> Result<SpectrumSamples> {
    let n = s.len();
    let half: usize = spans.iter().sum();
    if 2 * half + 1 >= n {
        return Err(invalid(format!(
            "Daniell spans {spans:?} need a grid longer than {}, got {n}",
            2 * half + 1
        )));
    }
    let kernel = daniell_kernel(spans)?;
    let v = s.values();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, w) in kernel.iter().enumerate() {
            let idx = (i + n + j - half) % n;
            acc += w * v[idx];
        }
        *o = acc;
    }
    let grid = s.grid().clone();
    for i in 0..n {
        let m = grid.mirror_index(i);
        if m > i {
            let avg = 0.5 * (out[i] + out[m]);
            out[i] = avg;
            out[m] = avg;
        }
    }
    Ok(SpectrumSamples::from_raw(grid, out))
}

// ---------------------------------------------------------------------------
// Contamination

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    #[default]
    Sin,
    Cos,
}

/// One periodic component `a·sin(A t)` (or cos), `t = 1..n`.
///
/// With `raw_amplitude = false` the amplitude is `√(8πz/n)`, which adds about
/// `z` to the periodogram at ±A; with `raw_amplitude = true` it is `√z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendComponent {
    pub z: f64,
    pub freq: f64,
    #[serde(default)]
    pub phase: Phase,
    #[serde(default)]
    pub raw_amplitude: bool,
}

impl TrendComponent {
    pub fn new(z: f64, freq: f64, phase: Phase) -> Self {
        Self {
            z,
            freq,
            phase,
            raw_amplitude: false,
        }
    }

    pub fn amplitude(&self, n: usize) -> f64 {
        if self.raw_amplitude {
            self.z.sqrt()
        } else {
            (8.0 * PI * self.z / n as f64).sqrt()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.z >= 0.0 && self.z.is_finite()) {
            return Err(invalid(format!("trend mass must be nonnegative, got {}", self.z)));
        }
        if !(self.freq > 0.0 && self.freq < PI) {
            return Err(invalid(format!(
                "trend frequency must lie in (0, π), got {}",
                self.freq
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ContaminationSpec {
    /// Adds `z` to the pilot at ±ω.
    PilotAdditive { omega: f64, z: f64 },
    /// Adds periodic components to the series before the periodogram.
    Trend { components: Vec<TrendComponent> },
}

/// The pilot with `z` added at ±ω* (once when ω* ∈ {0, π}).
pub fn contaminate_pilot(s: &SpectrumSamples, omega: f64, z: f64) -> Result<SpectrumSamples> {
    if !(z >= 0.0 && z.is_finite()) {
        return Err(invalid(format!("contamination mass must be nonnegative, got {z}")));
    }
    let grid = s.grid();
    let i = grid
        .index_of(omega)
        .ok_or_else(|| invalid(format!("ω* = {omega} is not a grid frequency for n = {}", grid.n())))?;
    let mut values = s.values().to_vec();
    let m = grid.mirror_index(i);
    values[i] += z;
    if m != i {
        values[m] += z;
    }
    Ok(SpectrumSamples::from_raw(grid.clone(), values))
}

/// Adds the trend components to `x`.
pub fn inject_trend(x: &TimeSeries, components: &[TrendComponent]) -> Result<TimeSeries> {
    let n = x.len();
    let mut values = x.values().to_vec();
    for c in components {
        c.validate()?;
        let a = c.amplitude(n);
        if a == 0.0 {
            continue;
        }
        for (k, v) in values.iter_mut().enumerate() {
            let t = (k + 1) as f64;
            *v += a * match c.phase {
                Phase::Sin => (c.freq * t).sin(),
                Phase::Cos => (c.freq * t).cos(),
            };
        }
    }
    Ok(TimeSeries { values })
}
