mod common;

use driftplace::kernels::{self, Matern32Params, SpaceTimePoint, TemporalHelmholtzParams};
use driftplace::{linalg, oracle};
use nalgebra::DMatrix;
use rand::Rng as _;

#[test]
fn matern_second_derivative_at_zero_lag_is_exact() {
    let p = Matern32Params::new(1.0, 1.0).unwrap();
    for t in [0.0, 0.3, 7.0] {
        assert_eq!(kernels::matern32_block(&p, t, t)[(1, 1)], 3.0);
    }
    let p = Matern32Params::new(2.0, 0.5).unwrap();
    assert_eq!(kernels::matern32_block(&p, 1.0, 1.0)[(1, 1)], 0.5 * 3.0 / 4.0);
}

#[test]
fn matern_block_matches_finite_differences() {
    let mut r = common::rng(1);
    for _ in 0..50 {
        let (l, v) = (r.random_range(0.3..3.0), r.random_range(0.2..2.0));
        let (t, t2): (f64, f64) = (r.random_range(0.0..4.0), r.random_range(0.0..4.0));
        if (t - t2).abs() < 1e-2 {
            continue;
        }
        let got = kernels::matern32_block(&Matern32Params::new(l, v).unwrap(), t, t2);
        let fd = oracle::matern32_block_fd(l, v, t, t2, 1e-4);
        assert!((got - fd).abs().max() < 1e-6 * (1.0 + fd.abs().max()), "{got} vs {fd}");
    }
}

#[test]
fn helmholtz_block_matches_finite_differences_and_analytic_oracle() {
    let mut r = common::rng(2);
    for _ in 0..50 {
        let p = common::random_params(&mut r);
        let (x, x2) = (common::random_point(&mut r), common::random_point(&mut r));
        let got = kernels::helmholtz_block(&p, x.s, x2.s);
        let fd = oracle::helmholtz_block_fd(&p, x.s, x2.s, 1e-4);
        assert!((got - fd).abs().max() < 1e-6 * (1.0 + fd.abs().max()));
        let dense = oracle::dense_thelm_cov(&p, &[SpaceTimePoint::new(x.s, 0.0), SpaceTimePoint::new(x2.s, 0.0)]);
        let analytic = dense.fixed_view::<2, 2>(0, 2).into_owned() / p.temporal.variance;
        assert!((got - analytic).abs().max() < 1e-12);
    }
}

#[test]
fn helmholtz_block_is_symmetric_under_swap() {
    let mut r = common::rng(3);
    let p = common::random_params(&mut r);
    for _ in 0..20 {
        let (a, b) = (common::random_point(&mut r), common::random_point(&mut r));
        let k = kernels::thelm_block(&p, &a, &b);
        let kt = kernels::thelm_block(&p, &b, &a);
        assert!((k - kt.transpose()).abs().max() < 1e-14);
        let e = kernels::extended_block(&p, &a, &b);
        let et = kernels::extended_block(&p, &b, &a);
        assert!((e - et.transpose()).abs().max() < 1e-14);
    }
}

#[test]
fn gram_is_positive_definite_and_matches_oracle() {
    let mut r = common::rng(4);
    let p = common::random_params(&mut r);
    let pts = common::random_points(&mut r, 25);
    let k = kernels::gram_matrix(&pts, |a, b| kernels::thelm_block(&p, a, b));
    let dense = oracle::dense_thelm_cov(&p, &pts);
    assert!((&k - &dense).amax() < 1e-12);
    let g = kernels::gram(&pts, |a, b| kernels::thelm_block(&p, a, b), kernels::default_jitter(&k)).unwrap();
    assert!(linalg::cholesky_lower(&g.matrix).is_some());
    assert_eq!(linalg::asymmetry(&k), 0.0);
}

#[test]
fn hyperparameter_gradients_match_finite_differences() {
    let mut r = common::rng(5);
    for _ in 0..20 {
        let p = common::random_params(&mut r);
        let (x, x2) = (common::random_point(&mut r), common::random_point(&mut r));
        let (block, grads) = kernels::thelm_block_with_grads(&p, &x, &x2);
        assert!((block - kernels::thelm_block(&p, &x, &x2)).abs().max() < 1e-14);
        for (i, g) in grads.iter().enumerate() {
            let entry = |a: usize, b: usize| {
                let f = |h: f64| {
                    let mut v = p.to_vec();
                    v[i] += h;
                    kernels::thelm_block(&TemporalHelmholtzParams::from_vec(&v), &x, &x2)[(a, b)]
                };
                oracle::central_difference(f, 0.0, 1e-5)
            };
            let fd = nalgebra::Matrix2::from_fn(entry);
            assert!((g - fd).abs().max() < 1e-6 * (1.0 + fd.abs().max()), "param {i}: {g} vs {fd}");
        }
    }
}

#[test]
fn extended_gram_is_positive_semidefinite() {
    let mut r = common::rng(6);
    let p = common::random_params(&mut r);
    let pts = common::random_points(&mut r, 10);
    let k: DMatrix<f64> = kernels::gram_matrix(&pts, |a, b| kernels::extended_block(&p, a, b));
    let min = k.symmetric_eigenvalues().min();
    assert!(min > -1e-9 * k.amax(), "min eigenvalue {min}");
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    assert!(Matern32Params::new(0.0, 1.0).is_err());
    assert!(Matern32Params::new(1.0, -1.0).is_err());
    assert!(kernels::RbfParams::new(f64::NAN, 1.0).is_err());
    let mut p = TemporalHelmholtzParams::synthetic_default();
    p.obs_noise_sd = -0.1;
    assert_eq!(p.validate().unwrap_err().kind(), "invalid_param");
}
