mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fd_gradient, fd_jacobian, flatten, random_theta, rel_err, ExpModel};
use spectral_renyi::divergence::{renyi_discrete, DivergenceSpec};
use spectral_renyi::models::{model_bound_constants, Ar1Model, Ar1Params, ModelKind, ModelSpectrum};
use spectral_renyi::optimize::*;
use spectral_renyi::sampling::{contaminate_pilot, periodogram, simulate_gaussian, RngStream};
use spectral_renyi::spectral::{FreqGrid, SpectrumSamples};

fn toy_objective(alpha: f64) -> Objective {
    let pilot = SpectrumSamples::constant(FreqGrid::new(16, true).unwrap(), 1.0).unwrap();
    Objective::new(&pilot, Arc::new(ExpModel), DivergenceSpec::new(alpha).unwrap()).unwrap()
}

fn ar1_pilot(n: usize, sigma: f64, rho: f64, stream: u64) -> SpectrumSamples {
    let theta = Ar1Params::from_natural(sigma, rho).unwrap().to_vec();
    let s = ModelSpectrum::new(&Ar1Model, &theta).unwrap();
    periodogram(&simulate_gaussian(&s, n, &RngStream::new(99, stream)).unwrap())
}

#[test]
fn toy_gradients() {
    let theta = [2f64.ln()];
    let g = renyi_gradient(&theta, &toy_objective(0.5)).unwrap();
    assert!((g[0] + 1.0 / 3.0).abs() < 1e-14, "{g:?}");
    let g = is_gradient(&theta, &toy_objective(1.0)).unwrap();
    assert!((g[0] + 0.5).abs() < 1e-14, "{g:?}");
}

#[test]
fn toy_fixed_step_descent() {
    let obj = toy_objective(0.5);
    let stop = StopCriteria {
        max_iter: 100,
        grad_tol: 0.0,
    };
    let path = gd_fixed(&[2f64.ln()], &obj, &StepRule::Constant(0.5), stop).unwrap();
    let xs: Vec<f64> = path.iterates.iter().map(|t| t[0]).collect();
    assert!(xs.windows(2).all(|w| w[1] < w[0] && w[1] >= 0.0));
    assert!(xs[100].abs() < 1e-3, "{}", xs[100]);
}

#[test]
fn toy_armijo_converges() {
    let obj = toy_objective(0.5);
    let stop = StopCriteria {
        max_iter: 200,
        grad_tol: 1e-9,
    };
    let path = gd_armijo(&[2f64.ln()], &obj, &ArmijoConfig::default(), stop).unwrap();
    assert!(path.last()[0].abs() < 1e-6, "{:?}", path.last());
    assert_eq!(path.armijo_violations(0.5), 0);
}

#[test]
fn model_log_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [ModelKind::Ar1, ModelKind::Brune, ModelKind::BruneLog] {
        let model = kind.build();
        for _ in 0..100 {
            let theta = random_theta(&mut rng, kind);
            let omega = rng.random_range(0.05..PI);
            let e = model.eval(&theta, omega);
            let fd = fd_gradient(|t| model.density(t, omega).ln(), &theta);
            assert!(rel_err(e.grad(), &fd) < 1e-5, "{kind:?} {theta:?} {omega}");
            let hess: Vec<Vec<f64>> = (0..model.dim())
                .map(|i| (0..model.dim()).map(|j| e.hess(i, j)).collect())
                .collect();
            let fdh = fd_jacobian(|t| model.eval(t, omega).grad().to_vec(), &theta);
            assert!(rel_err(&flatten(&hess), &flatten(&fdh)) < 1e-5, "{kind:?} {theta:?}");
            assert_eq!(model.density(&theta, omega), model.density(&theta, -omega));
            assert!(model.density(&theta, omega) > 0.0);
        }
    }
}

#[test]
fn hessian_at_exact_fit_is_psd_rank_one_sum() {
    let theta = Ar1Params::from_natural(1.5, 0.3).unwrap().to_vec();
    let grid = FreqGrid::new(128, true).unwrap();
    let pilot = SpectrumSamples::from_spectrum(grid, &ModelSpectrum::new(&Ar1Model, &theta).unwrap()).unwrap();
    for alpha in [0.25, 0.5, 0.9, 1.0] {
        let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::new(alpha).unwrap()).unwrap();
        let h = renyi_hessian(&theta, &obj).unwrap();
        let m = nalgebra::Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
        let min = m.symmetric_eigenvalues().min();
        assert!(min >= -1e-10, "α = {alpha}: {min}");
        assert!((h[0][1] - h[1][0]).abs() < 1e-12);
    }
}

#[test]
fn hessian_is_symmetric_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pilot = ar1_pilot(200, 1.0, 0.2, 0);
    for kind in [ModelKind::Ar1, ModelKind::BruneLog] {
        for _ in 0..20 {
            let obj = Objective::new(
                &pilot,
                kind.build(),
                DivergenceSpec::new(rng.random_range(0.1..1.0)).unwrap(),
            )
            .unwrap();
            let h = obj.hessian(&random_theta(&mut rng, kind)).unwrap();
            for i in 0..h.len() {
                for j in 0..h.len() {
                    assert!((h[i][j] - h[j][i]).abs() < 1e-12);
                }
            }
        }
    }
}

fn ar1_box() -> Vec<(f64, f64)> {
    vec![(-0.5, 0.5), (-1.5, 1.5)]
}

fn random_in(rng: &mut ChaCha8Rng, b: &[(f64, f64)]) -> Vec<f64> {
    b.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()
}

#[test]
fn hessian_norm_and_lipschitz_quotients_below_smoothness_bound() {
    let n = 256;
    let alpha = 0.5;
    let grid = FreqGrid::new(n, true).unwrap();
    let bounds = model_bound_constants(&Ar1Model, &ar1_box(), &grid, 9).unwrap();
    let l = smoothness_bound(bounds.u1, bounds.u2, alpha).unwrap();
    let clean = ar1_pilot(n, 1.0, 0.3, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for z in [0.0, 1e4] {
        let pilot = contaminate_pilot(&clean, PI / 4.0, z).unwrap();
        let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::new(alpha).unwrap()).unwrap();
        for _ in 0..50 {
            let a = random_in(&mut rng, &ar1_box());
            let b = random_in(&mut rng, &ar1_box());
            let h = obj.hessian(&a).unwrap();
            let m = nalgebra::Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
            let op = m.symmetric_eigenvalues().abs().max();
            assert!(op <= l, "‖H‖ = {op} > L = {l}");
            let ga = obj.gradient(&a).unwrap();
            let gb = obj.gradient(&b).unwrap();
            let diff: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x - y).collect();
            let step: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let q = common::norm(&diff) / common::norm(&step);
            assert!(q <= l, "z = {z}: Lipschitz quotient {q} > L = {l}");
        }
    }
}

#[test]
fn descent_with_inverse_smoothness_step() {
    let n = 128;
    let alpha = 0.5;
    let grid = FreqGrid::new(n, true).unwrap();
    let bounds = model_bound_constants(&Ar1Model, &ar1_box(), &grid, 9).unwrap();
    let gamma = 1.0 / smoothness_bound(bounds.u1, bounds.u2, alpha).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for run in 0..50 {
        let pilot = ar1_pilot(n, rng.random_range(0.7..1.4), rng.random_range(-0.4..0.4), 100 + run);
        let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::new(alpha).unwrap()).unwrap();
        let theta0 = random_in(&mut rng, &ar1_box());
        let stop = StopCriteria {
            max_iter: 100,
            grad_tol: 0.0,
        };
        let path = gd_fixed(&theta0, &obj, &StepRule::Constant(gamma), stop).unwrap();
        for w in path.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "run {run}: {} > {}", w[1], w[0]);
        }
    }
}

#[test]
fn paths_are_deterministic_and_gradients_consistent() {
    let pilot = ar1_pilot(300, 1.0, 0.5, 2);
    let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::new(0.75).unwrap()).unwrap();
    let stop = StopCriteria {
        max_iter: 300,
        grad_tol: 1e-6,
    };
    let a = gd_fixed(&[0.4, -0.2], &obj, &StepRule::Constant(0.02), stop).unwrap();
    let b = gd_fixed(&[0.4, -0.2], &obj, &StepRule::Constant(0.02), stop).unwrap();
    assert_eq!(a, b);
    assert!(a.max_gradient_drift(&obj).unwrap() <= 1e-12);
    assert_eq!(a.iterates.len(), a.gradients.len());
    assert_eq!(a.iterates.len(), a.objective.len());
    assert_eq!(a.steps.len() + 1, a.iterates.len());

    let c = gd_armijo(
        &[0.4, -0.2],
        &obj,
        &ArmijoConfig::default(),
        StopCriteria {
            max_iter: 500,
            grad_tol: 0.0,
        },
    )
    .unwrap();
    assert_eq!(c.armijo_violations(0.5), 0);
    assert!(c.max_gradient_drift(&obj).unwrap() <= 1e-12);
}

#[test]
fn step_sequences_are_followed() {
    let obj = toy_objective(0.5);
    let rule = StepRule::Sequence(vec![0.1, 0.2, 0.3]);
    let path = gd_fixed(
        &[1.0],
        &obj,
        &rule,
        StopCriteria {
            max_iter: 5,
            grad_tol: 0.0,
        },
    )
    .unwrap();
    assert_eq!(path.steps, vec![0.1, 0.2, 0.3, 0.3, 0.3]);
    assert!(gd_fixed(&[1.0], &obj, &StepRule::Sequence(vec![]), StopCriteria::default()).is_err());
    assert!(gd_fixed(&[1.0], &obj, &StepRule::Constant(-1.0), StopCriteria::default()).is_err());
}

#[test]
fn brune_projection_failure_after_repeated_clamps() {
    // σ pushed negative by a huge step every iteration
    let grid = FreqGrid::new(64, true).unwrap();
    let truth = [0.2, 1.0, 1.0];
    let model = ModelKind::Brune.build();
    let pilot = SpectrumSamples::from_spectrum(grid, &ModelSpectrum::new(model.as_ref(), &truth).unwrap()).unwrap();
    let obj = Objective::new(&pilot, model, DivergenceSpec::new(0.5).unwrap()).unwrap();
    let path = gd_fixed(
        &[1.0, 1.0, 1.0],
        &obj,
        &StepRule::Constant(1e6),
        StopCriteria::default(),
    )
    .unwrap();
    assert!(
        !path.projections.is_empty(),
        "{:?} {:?}",
        path.stop_reason,
        path.iterates
    );
    assert!(matches!(
        path.stop_reason,
        StopReason::ProjectionFailure | StopReason::NonFinite
    ));
}

#[test]
fn singular_model_is_a_domain_error() {
    let grid = FreqGrid::new(32, false).unwrap();
    let pilot = SpectrumSamples::constant(grid, 1.0).unwrap();
    let spec = DivergenceSpec::new(0.5).unwrap().with_exclude_zero(false);
    let obj = Objective::new(&pilot, ModelKind::Brune.build(), spec).unwrap();
    let err = obj.gradient(&[1.0, 1.0, 1.0]).unwrap_err();
    assert!(err.is_numerical(), "{err}");
}

#[test]
fn objective_value_matches_discrete_divergence() {
    let pilot = ar1_pilot(128, 1.0, -0.2, 3);
    let theta = [0.1, 0.3];
    let model_s =
        SpectrumSamples::from_spectrum(pilot.grid().clone(), &ModelSpectrum::new(&Ar1Model, &theta).unwrap()).unwrap();
    for alpha in [0.3, 1.0] {
        let spec = DivergenceSpec::new(alpha).unwrap();
        let obj = Objective::new(&pilot, Arc::new(Ar1Model), spec).unwrap();
        let direct = renyi_discrete(&pilot, &model_s, &spec).unwrap();
        assert!((obj.value(&theta).unwrap() - direct).abs() < 1e-13);
    }
}

#[test]
fn is_first_step_far_more_sensitive_than_renyi() {
    let n = 1024;
    let pilot = ar1_pilot(n, 1.0, 0.5, 4);
    let contaminated = contaminate_pilot(&pilot, PI / 4.0, 1e4).unwrap();
    let theta0 = Ar1Params::from_natural(0.8, 0.2).unwrap().to_vec();
    let one = StopCriteria {
        max_iter: 1,
        grad_tol: 0.0,
    };
    let dist = |alpha: f64| {
        let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::new(alpha).unwrap()).unwrap();
        let objc = obj.with_pilot(&contaminated).unwrap();
        let a = gd_fixed(&theta0, &obj, &StepRule::Constant(0.01), one).unwrap();
        let b = gd_fixed(&theta0, &objc, &StepRule::Constant(0.01), one).unwrap();
        path_distance(&a, &b, 1).unwrap()
    };
    let (is, renyi) = (dist(1.0), dist(0.5));
    assert!(is > 100.0 * renyi, "IS {is} vs Rényi {renyi}");
}

#[test]
fn probe_flags_inapplicable_when_omega_excluded() {
    let pilot = ar1_pilot(64, 1.0, 0.0, 5);
    let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::itakura_saito()).unwrap();
    let cfg = ProbeConfig {
        omega: 0.0,
        z_ladder: vec![1.0],
        step: 0.01,
        check_box: vec![(-0.5, 0.5), (-1.0, 1.0)],
        check_points: 3,
        armijo: ArmijoConfig::default(),
        stationary_stop: StopCriteria::default(),
    };
    let report = is_instability_probe(&[0.0, 0.0], &obj, &cfg).unwrap();
    assert!(!report.applicable);
    assert_eq!(report.multiplicity, 0);
    assert!(report.first_step.is_empty());
}

#[test]
fn probe_quantities_vanish_as_z_shrinks() {
    let pilot = ar1_pilot(256, 1.0, 0.5, 6);
    let obj = Objective::new(&pilot, Arc::new(Ar1Model), DivergenceSpec::itakura_saito()).unwrap();
    let cfg = ProbeConfig {
        omega: PI / 4.0,
        z_ladder: vec![1e-2, 1e-4, 1e-6],
        step: 0.01,
        check_box: vec![(-0.5, 0.5), (-1.0, 1.0)],
        check_points: 3,
        armijo: ArmijoConfig::default(),
        stationary_stop: StopCriteria {
            max_iter: 2000,
            grad_tol: 1e-9,
        },
    };
    let r = is_instability_probe(&[0.0, 1.0], &obj, &cfg).unwrap();
    assert!(r.applicable);
    let d: Vec<f64> = r.first_step.iter().map(|x| x.distance).collect();
    let c: Vec<f64> = r.stationary.iter().map(|x| x.clean_grad_norm).collect();
    assert!(d[2] < d[1] && d[1] < d[0] && d[2] < 1e-8, "{d:?}");
    assert!(c[2] < 1e-6, "{c:?}");
}
