mod common;

use common::{max_standardized_error, moments};
use dfosr::sampling::{
    sample_constrained_gaussian, sample_gaussian_precision, sample_truncated_gamma, GaussianSystem, RandomStream,
    SliceSampler,
};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

fn random_spd(n: usize, rng: &mut RandomStream) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

#[test]
fn precision_draws_match_dense_inverse() {
    let mut rng = RandomStream::new(31);
    for _ in 0..3 {
        let q = random_spd(3, &mut rng);
        let l = rng.normal_vector(3) * 2.0;
        let cov = q.clone().try_inverse().unwrap();
        let mean = &cov * &l;
        let sys = GaussianSystem::new(q, l).unwrap();
        let draws: Vec<_> = (0..100_000)
            .map(|_| sample_gaussian_precision(&sys, &mut rng).unwrap())
            .collect();
        let worst = max_standardized_error(&moments(&draws), &mean, &cov);
        assert!(worst < 4.0, "{worst}");
    }
}

#[test]
fn constrained_draws_match_analytic_conditional() {
    let sys = GaussianSystem::new(DMatrix::identity(3, 3), DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
    let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    let mut rng = RandomStream::new(8);
    let draws: Vec<_> = (0..100_000)
        .map(|_| {
            let d = sample_constrained_gaussian(&sys, &c, &mut rng).unwrap();
            assert!(d[0].abs() < 1e-12);
            d
        })
        .collect();
    let m = moments(&draws);
    let mean = DVector::from_vec(vec![0.0, 2.0, 3.0]);
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0]));
    assert!(max_standardized_error(&m, &mean, &cov) < 4.0);
    assert!(m.mean[0].abs() < 1e-12 && m.cov[(0, 0)] < 1e-20);
}

#[test]
fn constraints_hold_on_random_systems() {
    let mut rng = RandomStream::new(77);
    for n in 2..8 {
        for c_rows in 1..n {
            let sys = GaussianSystem::new(random_spd(n, &mut rng), rng.normal_vector(n)).unwrap();
            let c = DMatrix::from_fn(c_rows, n, |_, _| rng.normal());
            for _ in 0..20 {
                let d = sample_constrained_gaussian(&sys, &c, &mut rng).unwrap();
                assert!((&c * d).amax() < 1e-10);
            }
        }
    }
}

#[test]
fn marginals_pass_chi_squared_goodness_of_fit() {
    let bins = 20;
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.999);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let systems = [
        (DMatrix::identity(2, 2), DVector::zeros(2)),
        (
            DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]),
            DVector::from_vec(vec![1.0, -3.0]),
        ),
        (
            DMatrix::from_row_slice(3, 3, &[3.0, 0.5, -0.2, 0.5, 1.0, 0.3, -0.2, 0.3, 0.8]),
            DVector::from_vec(vec![0.5, 0.0, 2.0]),
        ),
    ];
    let mut rng = RandomStream::new(4);
    let n = 100_000;
    for (q, l) in systems {
        let cov = q.clone().try_inverse().unwrap();
        let mean = &cov * &l;
        let sys = GaussianSystem::new(q, l).unwrap();
        let dim = sys.dim();
        let mut counts = vec![vec![0usize; bins]; dim];
        for _ in 0..n {
            let d = sample_gaussian_precision(&sys, &mut rng).unwrap();
            for i in 0..dim {
                let u = std_normal.cdf((d[i] - mean[i]) / cov[(i, i)].sqrt());
                counts[i][((u * bins as f64) as usize).min(bins - 1)] += 1;
            }
        }
        let expected = n as f64 / bins as f64;
        for c in counts {
            let stat: f64 = c.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
            assert!(stat < critical, "chi-squared {stat} exceeds {critical}");
        }
    }
}

#[test]
fn slice_chain_on_truncated_normal() {
    let mut rng = RandomStream::new(12);
    let slice = SliceSampler::default();
    let mut x = 0.3;
    let n = 100_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        x = slice.sample(|v| -0.5 * v * v, x, (-10.0, 10.0), &mut rng).unwrap();
        s += x;
        s2 += x * x;
    }
    let mean = s / n as f64;
    let var = s2 / n as f64 - mean * mean;
    assert!(mean.abs() < 0.02, "{mean}");
    assert!((var - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn truncated_gamma_matches_untruncated_when_truncation_is_vacuous() {
    // common random numbers: the same uniform drives both inversions
    let n = 10_000;
    let mut a = RandomStream::new(5);
    let mut b = RandomStream::new(5);
    let mut diff: f64 = 0.0;
    let mut truncated = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_truncated_gamma(11.0, 3.0, 1e-8, &mut a).unwrap();
        let y = sample_truncated_gamma(11.0, 3.0, 0.0, &mut b).unwrap();
        diff = diff.max((x - y).abs());
        truncated.push(x);
    }
    assert!(diff < 1e-9, "{diff}");
    let g = statrs::distribution::Gamma::new(11.0, 3.0).unwrap();
    let ks = common::ks_statistic(&mut truncated, |x| g.cdf(x));
    assert!(ks < 0.02, "{ks}");
}
