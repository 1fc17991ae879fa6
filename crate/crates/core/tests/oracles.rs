mod common;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_spectrum, rel_err};
use spectral_renyi::divergence::{
    contamination_shift, dual_objective, gaussian_renyi_finite, primal_objective, renyi_continuous, renyi_discrete,
    variational_dual, variational_primal, DivergenceSpec,
};
use spectral_renyi::models::{Ar1Model, Ar1Params, ModelSpectrum};
use spectral_renyi::sampling::contaminate_pilot;
use spectral_renyi::spectral::{autocovariance, FreqGrid, SpectrumSamples};

/// Straight transcription of the mean of
/// `(1/(1−α))[log(αS̃ + (1−α)S) − α log S̃ − (1−α) log S]`.
fn renyi_oracle(s: &SpectrumSamples, st: &SpectrumSamples, alpha: f64) -> f64 {
    let idx: Vec<usize> = s.grid().included_indices().collect();
    let sum: f64 = idx
        .iter()
        .map(|&i| {
            let (a, b) = (s.values()[i], st.values()[i]);
            ((alpha * b + (1.0 - alpha) * a).ln() - alpha * b.ln() - (1.0 - alpha) * a.ln()) / (1.0 - alpha)
        })
        .sum();
    sum / idx.len() as f64
}

fn perturbed(rng: &mut ChaCha8Rng, s: &SpectrumSamples, scale: f64) -> SpectrumSamples {
    let g = s.grid();
    let mut v = s.values().to_vec();
    for i in 0..g.n() {
        if g.freqs()[i] >= 0.0 {
            let f = (scale * rng.random_range(-1.0..1.0)).exp();
            v[i] *= f;
            v[g.mirror_index(i)] = v[i];
        }
    }
    SpectrumSamples::new(g.clone(), v).unwrap()
}

#[test]
fn variational_minimizers_attain_the_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let grid = FreqGrid::new(40, true).unwrap();
    for _ in 0..20 {
        let s = random_spectrum(&mut rng, &grid);
        let st = random_spectrum(&mut rng, &grid);
        for alpha in [0.1, 0.5, 0.9] {
            let spec = DivergenceSpec::new(alpha).unwrap();
            let want = renyi_oracle(&s, &st, alpha);
            let p = variational_primal(&s, &st, alpha, &spec).unwrap();
            let d = variational_dual(&s, &st, alpha, &spec).unwrap();
            assert!(rel_err(&[p.objective], &[want]) < 1e-10, "{} vs {want}", p.objective);
            assert!(rel_err(&[d.objective], &[want]) < 1e-10, "{} vs {want}", d.objective);
            for _ in 0..10 {
                let c = perturbed(&mut rng, &p.minimizer, 0.2);
                assert!(primal_objective(&s, &st, &c, alpha, &spec).unwrap() >= p.objective);
                let c = perturbed(&mut rng, &d.minimizer, 0.2);
                assert!(dual_objective(&s, &st, &c, alpha, &spec).unwrap() >= d.objective);
            }
        }
    }
}

#[test]
fn discrete_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for n in [2, 7, 64, 257] {
        let grid = FreqGrid::new(n, true).unwrap();
        let s = random_spectrum(&mut rng, &grid);
        let st = random_spectrum(&mut rng, &grid);
        for alpha in [0.05, 0.5, 0.95] {
            let got = renyi_discrete(&s, &st, &DivergenceSpec::new(alpha).unwrap()).unwrap();
            assert!(rel_err(&[got], &[renyi_oracle(&s, &st, alpha)]) < 1e-11);
        }
    }
}

#[test]
fn continuous_scale_family_closed_form() {
    // Spectra differing by a constant factor c give a frequency-free integrand.
    let a = Ar1Params::from_natural(1.0, 0.7).unwrap().to_vec();
    let b = Ar1Params::from_natural(1.5, 0.7).unwrap().to_vec();
    let (sa, sb) = (
        ModelSpectrum::new(&Ar1Model, &a).unwrap(),
        ModelSpectrum::new(&Ar1Model, &b).unwrap(),
    );
    let c: f64 = 2.25;
    for alpha in [0.25, 0.5, 0.75] {
        let want = ((alpha * c + 1.0 - alpha).ln() - alpha * c.ln()) / (1.0 - alpha);
        let got = renyi_continuous(&sa, &sb, alpha, 256).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn ar1_autocovariance_closed_form() {
    for (sigma, rho) in [(1.0, 0.5), (0.3, -0.8), (2.0, 0.95)] {
        let theta = Ar1Params::from_natural(sigma, rho).unwrap().to_vec();
        let s = ModelSpectrum::new(&Ar1Model, &theta).unwrap();
        let acov = autocovariance(&s, 10).unwrap();
        for (k, g) in acov.iter().enumerate() {
            let want = sigma * sigma * rho.powi(k as i32) / (1.0 - rho * rho);
            assert!((g - want).abs() < 1e-9 * want.abs().max(1.0), "lag {k}: {g} vs {want}");
        }
    }
}

#[test]
fn gaussian_order_two_by_hand() {
    let ga = |s: f64, r: f64| (s * s / (1.0 - r * r), s * s * r / (1.0 - r * r));
    let ((a0, a1), (b0, b1)) = (ga(1.0, 0.5), ga(0.8, -0.2));
    let det = |x: f64, y: f64| x * x - y * y;
    let ta = Ar1Params::from_natural(1.0, 0.5).unwrap().to_vec();
    let tb = Ar1Params::from_natural(0.8, -0.2).unwrap().to_vec();
    let sa = ModelSpectrum::new(&Ar1Model, &ta).unwrap();
    let sb = ModelSpectrum::new(&Ar1Model, &tb).unwrap();
    for alpha in [0.3, 0.5, 0.8] {
        let m0 = alpha * b0 + (1.0 - alpha) * a0;
        let m1 = alpha * b1 + (1.0 - alpha) * a1;
        let want =
            (det(m0, m1).ln() - (1.0 - alpha) * det(a0, a1).ln() - alpha * det(b0, b1).ln()) / (2.0 * (1.0 - alpha));
        let got = gaussian_renyi_finite(&sa, &sb, alpha, 2).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn gaussian_rate_approaches_half_the_spectral_divergence() {
    let ta = Ar1Params::from_natural(1.0, 0.5).unwrap().to_vec();
    let tb = Ar1Params::from_natural(1.2, -0.3).unwrap().to_vec();
    let sa = ModelSpectrum::new(&Ar1Model, &ta).unwrap();
    let sb = ModelSpectrum::new(&Ar1Model, &tb).unwrap();
    let limit = 0.5 * renyi_continuous(&sa, &sb, 0.5, 1 << 14).unwrap();
    let errs: Vec<f64> = [32, 64, 128, 256]
        .iter()
        .map(|&n| (gaussian_renyi_finite(&sa, &sb, 0.5, n).unwrap() / n as f64 - limit).abs())
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[3] < 1e-3, "{errs:?}");
}

#[test]
fn shift_agrees_with_recomputed_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let grid = FreqGrid::new(128, true).unwrap();
    let pilot = random_spectrum(&mut rng, &grid);
    let model = random_spectrum(&mut rng, &grid);
    let omega = PI / 4.0;
    let sv = model.at(omega).unwrap();
    for alpha in [0.5, 1.0] {
        let spec = DivergenceSpec::new(alpha).unwrap();
        let base = renyi_discrete(&pilot, &model, &spec).unwrap();
        for z in [0.5, 10.0, 1e4] {
            let c = contaminate_pilot(&pilot, omega, z).unwrap();
            let want = renyi_discrete(&c, &model, &spec).unwrap() - base;
            let r = contamination_shift(&pilot, sv, omega, z, &spec).unwrap();
            assert_eq!(r.multiplicity, 2);
            assert!(
                (r.exact - want).abs() < 1e-11 * want.abs().max(1.0),
                "{} vs {want}",
                r.exact
            );
        }
    }
}

#[test]
fn shift_asymptotics() {
    let grid = FreqGrid::new(256, true).unwrap();
    let pilot = SpectrumSamples::constant(grid, 0.7).unwrap();
    let omega = PI / 8.0;
    for alpha in [0.5, 1.0] {
        let spec = DivergenceSpec::new(alpha).unwrap();
        let mut scaled = Vec::new();
        for z in [1e3, 1e4, 1e5, 1e6] {
            let r = contamination_shift(&pilot, 1.3, omega, z, &spec).unwrap();
            scaled.push(z * (r.exact - r.asymptotic).abs());
        }
        // z·(exact − asymptotic) stays bounded
        let (lo, hi) = scaled
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi <= 2.0 * lo + 1e-9, "α = {alpha}: {scaled:?}");
    }
    let is = DivergenceSpec::itakura_saito();
    let r = contamination_shift(&pilot, 1.3, omega, 1e8, &is).unwrap();
    assert!(rel_err(&[r.exact], &[r.predicted]) < 1e-6);
}
