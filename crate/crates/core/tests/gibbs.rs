mod common;

use dfosr::data::FunctionalDataset;
use dfosr::gibbs::{run_gibbs, GibbsSampler, McmcConfig, ObsVariance, Variant, ORTHONORMALITY_TOL};
use dfosr::sampling::RandomStream;
use dfosr::simstudy::{simulate_design, DesignKind, N_PREDICTORS};
use nalgebra::{DMatrix, DVector};

fn config(k: usize, n_iter: usize, burn_in: usize) -> McmcConfig {
    McmcConfig {
        k,
        n_iter,
        burn_in,
        thin: 1,
        seed: 3,
        ..McmcConfig::default()
    }
}

#[test]
fn working_likelihood_matches_full_likelihood() {
    for seed in 0..5 {
        let err = common::working_likelihood_error(seed);
        assert!(err < 1e-10, "{err}");
    }
}

#[test]
fn loadings_stay_orthonormal_every_sweep() {
    let truth = simulate_design(DesignKind::Dynamic, 50, 20, 4).unwrap();
    for variant in [Variant::DfosrHs, Variant::DfosrNig, Variant::FosrAr] {
        let mut sampler = GibbsSampler::new(
            McmcConfig {
                variant,
                ..config(6, 1, 0)
            },
            &truth.dataset(),
        )
        .unwrap();
        for it in 0..200 {
            sampler.sweep(it).unwrap();
            let err = sampler.state().loadings.orthonormality_error();
            assert!(err < ORTHONORMALITY_TOL, "{variant} sweep {it}: {err:e}");
            assert!(sampler.state().recomposition_error(sampler.predictors()) < 1e-10);
        }
    }
}

#[test]
fn noiseless_rank_one_loading_is_recovered() {
    let (t, m) = (40, 25);
    let points: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let mut f = DVector::from_iterator(m, points.iter().map(|x| (3.0 * x).cos() + x));
    f /= f.norm();
    let mut rng = RandomStream::new(2);
    let x = DMatrix::from_fn(t, 1, |_, _| rng.normal());
    let beta: Vec<f64> = (0..t).map(|i| 2.0 + (0.3 * i as f64).sin() + 0.5 * x[(i, 0)]).collect();
    let y = DMatrix::from_fn(t, m, |i, j| f[j] * beta[i]);
    let data = FunctionalDataset::new(points, y.clone(), x).unwrap();
    let draws = run_gibbs(&config(1, 600, 300), &data).unwrap();
    let aligned = draws.aligned_loadings();
    let mut mean = DVector::zeros(m);
    for a in &aligned {
        mean += a.column(0);
    }
    mean /= aligned.len() as f64;
    let inner = mean.normalize().dot(&f).abs();
    assert!(inner > 0.999, "{inner}");
    let fitted = draws.fitted_curves();
    let mut avg = DMatrix::zeros(t, m);
    for c in &fitted {
        avg += c;
    }
    avg /= fitted.len() as f64;
    let err = (avg - y).amax();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn ar_coefficient_and_noise_are_recovered() {
    let fit = common::recovery_fit(200, 20, 4, 3000, 1000, 1);
    for (k, phi) in fit.phi_mean.iter().enumerate() {
        assert!((phi - 0.8).abs() < 0.1, "φ_{k} = {phi}");
    }
    let rel = (fit.sigma_mean - fit.sigma_true).abs() / fit.sigma_true;
    assert!(rel < 0.1, "σ {} vs {}", fit.sigma_mean, fit.sigma_true);
}

#[test]
fn injected_truth_reproduces_true_surfaces() {
    let truth = simulate_design(DesignKind::Dynamic, 20, 12, 8).unwrap();
    let mut draws = run_gibbs(&config(4, 3, 1), &truth.dataset()).unwrap();
    draws.f[0] = truth.f_star.clone();
    draws.alpha[0] = truth.alpha_star.clone();
    for j in 0..N_PREDICTORS {
        let err = (draws.surface(0, j).unwrap() - truth.surface(j)).amax();
        assert!(err < 1e-12, "predictor {j}: {err}");
    }
    assert!(draws.surface(0, N_PREDICTORS).is_err());
}

#[test]
fn stored_draws_recompose_exactly() {
    let truth = simulate_design(DesignKind::Static, 30, 15, 2).unwrap();
    for variant in [Variant::DfosrHs, Variant::FosrAr] {
        let draws = run_gibbs(
            &McmcConfig {
                variant,
                sv: true,
                ..config(5, 120, 20)
            },
            &truth.dataset(),
        )
        .unwrap();
        assert_eq!(draws.len(), 100);
        assert!(draws.max_recomposition_error() < 1e-10);
        assert!(draws.obs_var.iter().flatten().all(|v| *v > 0.0 && v.is_finite()));
    }
}

#[test]
fn imputation_residuals_are_gaussian_at_the_fit() {
    // 7 observed ages out of 31
    let (t, m) = (30, 31);
    let points: Vec<f64> = (0..m).map(|i| 15.0 + i as f64).collect();
    let observed = [2usize, 7, 12, 17, 22, 27, 30];
    let mut rng = RandomStream::new(10);
    let x = DMatrix::from_fn(t, 1, |_, _| rng.normal());
    let y = DMatrix::from_fn(t, m, |i, j| {
        if observed.contains(&j) {
            let a = (points[j] - 30.0) / 10.0;
            (-a * a).exp() * (1.0 + 0.1 * i as f64 / t as f64) + 0.05 * rng.normal()
        } else {
            f64::NAN
        }
    });
    let data = FunctionalDataset::new(points, y, x).unwrap();
    assert_eq!(data.missing_cells().len(), t * (m - observed.len()));
    let mut sampler = GibbsSampler::new(config(3, 1, 0), &data).unwrap();
    for it in 0..300 {
        sampler.sweep(it).unwrap();
    }
    let var = match &sampler.state().obs {
        ObsVariance::Constant(v) => *v,
        ObsVariance::Stochastic(_) => unreachable!(),
    };
    let fit = (&sampler.state().loadings.f * &sampler.state().beta).transpose();
    let (mut s1, mut s2, mut n) = (0.0, 0.0, 0.0);
    for _ in 0..400 {
        sampler.impute_missing().unwrap();
        for (tt, mm) in data.missing_cells() {
            let z = (sampler.state().y[(tt, mm)] - fit[(tt, mm)]) / var.sqrt();
            s1 += z;
            s2 += z * z;
            n += 1.0;
        }
    }
    let mean = s1 / n;
    let second = s2 / n;
    assert!(mean.abs() < 0.01, "{mean}");
    assert!((second - 1.0).abs() < 0.02, "{second}");
}

#[test]
fn parallel_and_serial_runs_agree() {
    let truth = simulate_design(DesignKind::Dynamic, 25, 10, 6).unwrap();
    let a = run_gibbs(&config(4, 40, 20), &truth.dataset()).unwrap();
    let b = run_gibbs(
        &McmcConfig {
            parallel: false,
            ..config(4, 40, 20)
        },
        &truth.dataset(),
    )
    .unwrap();
    assert_eq!(a.beta, b.beta);
    assert_eq!(a.f, b.f);
}
