mod common;

use cbo::gp::{fit_hyperparameters, log_marginal_likelihood, FitOptions, GpModel, KernelParams};
use common::*;
use rand::Rng;

fn model_pair(r: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> (GpModel, RefGp) {
    let xs = spread_points(r, n, d, 0.1);
    let k = random_kernel(r, d);
    let ys: Vec<f64> = xs.iter().map(|_| standard_normal(r)).collect();
    let m = GpModel::new(k.params(), xs.clone(), ys.clone()).unwrap();
    (m, RefGp::with_nugget(k, xs, &ys, 1e-8))
}

#[test]
fn kernel_examples() {
    let k = KernelParams::new(1.0, vec![1.0, 1.0]).unwrap();
    assert_eq!(k.eval(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
    let k = KernelParams::new(2.0, vec![1.0]).unwrap();
    assert!((k.eval(&[0.0], &[1.0]).unwrap() - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
    let k = KernelParams::new(1.0, vec![0.5]).unwrap();
    assert!((k.eval(&[0.0], &[1.0]).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
    let k = KernelParams::new(1.0, vec![1.0]).unwrap();
    assert!((k.grad_first_arg(&[0.0], &[1.0]).unwrap()[0] - (-0.5f64).exp()).abs() < 1e-15);
    assert!(k.eval(&[0.0, 1.0], &[0.0]).is_err());
    assert!(KernelParams::new(0.0, vec![1.0]).is_err());
    assert!(KernelParams::new(1.0, vec![-1.0]).is_err());
}

#[test]
fn kernel_gradient_matches_finite_differences() {
    let mut r = rng(1);
    for _ in 0..100 {
        let k = random_kernel(&mut r, 3).params();
        let x: Vec<f64> = (0..3).map(|_| r.random()).collect();
        let y: Vec<f64> = (0..3).map(|_| r.random()).collect();
        let g = k.grad_first_arg(&x, &y).unwrap();
        let fd = fd_grad(&x, 1e-5, |p| k.eval(p, &y).unwrap());
        assert!(rel_err(&g, &fd, 1e-8) < 1e-6, "{g:?} vs {fd:?}");
        let same = k.grad_first_arg(&x, &x).unwrap();
        assert!(same.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn posterior_examples() {
    let k = KernelParams::new(1.3, vec![0.4]).unwrap();
    let prior = GpModel::prior(k.clone());
    let p = prior.posterior(&[0.2]);
    assert_eq!((p.mean, p.variance), (0.0, 1.3));
    let m = GpModel::new(k, vec![vec![0.1], vec![0.5], vec![0.9]], vec![1.7, -0.2, 0.4]).unwrap();
    let p = m.posterior(&[0.1]);
    assert!((p.mean - 1.7).abs() < 1e-6 && p.variance <= 1e-6);
    let far = m.posterior(&[0.9 + 20.0 * 0.4]);
    assert!(far.mean.abs() < 1e-6 && (far.variance - 1.3).abs() < 1e-6);
}

#[test]
fn interpolation_and_nonnegative_variance() {
    let mut r = rng(2);
    for _ in 0..50 {
        let (m, _) = model_pair(&mut r, 8, 2);
        for (x, y) in m.inputs().iter().zip(m.targets()) {
            let p = m.posterior(x);
            assert!((p.mean - y).abs() <= 1e-6 && p.variance <= 1e-6);
        }
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| r.random()).collect();
            let p = m.posterior(&x);
            assert!(p.variance >= 0.0 && p.variance.is_finite());
        }
    }
}

#[test]
fn fitted_models_interpolate() {
    let mut r = rng(3);
    for _ in 0..10 {
        let xs = spread_points(&mut r, 12, 2, 0.1);
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x[0]).sin() + x[1] * x[1]).collect();
        let rep = fit_hyperparameters(&xs, &ys, &[1.0, 1.0], &FitOptions::default(), None);
        let m = GpModel::new(rep.params, xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let p = m.posterior(x);
            assert!((p.mean - y).abs() <= 1e-6 && p.variance <= 1e-6);
        }
    }
}

#[test]
fn joint_posterior_matches_direct_formula() {
    let mut r = rng(4);
    for _ in 0..50 {
        let (m, reference) = model_pair(&mut r, 6, 2);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| r.random()).collect()).collect();
        let j = m.posterior_joint(&xs);
        for i in 0..3 {
            assert!((j.mean[i] - reference.mean(&xs[i])).abs() < 1e-8);
            for k in 0..3 {
                assert!((j.cov[(i, k)] - reference.cov(&xs[i], &xs[k])).abs() < 1e-8);
                assert_eq!(j.cov[(i, k)], j.cov[(k, i)]);
            }
        }
        let single = m.posterior_joint(&xs[..1]);
        let p = m.posterior(&xs[0]);
        assert!((single.mean[0] - p.mean).abs() < 1e-14 && (single.cov[(0, 0)] - p.variance).abs() < 1e-12);
        let bm = m.batch_moments(&xs);
        assert!((&bm.mean - &j.mean).norm() < 1e-14 && (&bm.cov - &j.cov).norm() < 1e-12);
    }
}

#[test]
fn nearly_coincident_batch_is_fully_correlated() {
    let mut r = rng(5);
    let (m, _) = model_pair(&mut r, 5, 1);
    let j = m.posterior_joint(&[vec![0.37], vec![0.37 + 1e-9]]);
    let corr = j.cov[(0, 1)] / (j.cov[(0, 0)] * j.cov[(1, 1)]).sqrt();
    assert!((corr - 1.0).abs() < 1e-6, "correlation {corr}");
}

#[test]
fn posterior_gradients_match_finite_differences() {
    let mut r = rng(6);
    let mut checked = 0;
    while checked < 100 {
        let (m, _) = model_pair(&mut r, 6, 2);
        let x: Vec<f64> = (0..2).map(|_| r.random()).collect();
        let g = m.posterior_grads(&x);
        if g.degenerate || g.variance < 1e-6 {
            continue;
        }
        let fd_mean = fd_grad(&x, 1e-6, |p| m.posterior(p).mean);
        let fd_sd = fd_grad(&x, 1e-6, |p| m.posterior(p).sd());
        assert!(rel_err(&g.dmean, &fd_mean, 1e-6) < 1e-4, "{:?} vs {fd_mean:?}", g.dmean);
        assert!(rel_err(&g.dsigma, &fd_sd, 1e-6) < 1e-4, "{:?} vs {fd_sd:?}", g.dsigma);
        checked += 1;
    }
}

#[test]
fn posterior_gradient_special_cases() {
    let k = KernelParams::new(1.0, vec![0.3]).unwrap();
    let m = GpModel::new(k.clone(), vec![vec![0.2], vec![0.6]], vec![0.5, 0.5]).unwrap();
    let g = m.posterior_grads(&[0.4]);
    assert!(g.dmean[0].abs() < 1e-8);
    let prior = GpModel::prior(k);
    let g = prior.posterior_grads(&[0.4]);
    assert_eq!((g.dmean[0], g.dsigma[0]), (0.0, 0.0));
    let g = m.posterior_grads(&[0.2 + 1e-7]);
    assert!(g.degenerate && g.dsigma[0] == 0.0);
}

#[test]
fn conditioning_examples() {
    let mut r = rng(7);
    for _ in 0..20 {
        let (m, _) = model_pair(&mut r, 5, 2);
        let x1 = spread_points(&mut r, 2, 2, 0.1);
        let j = m.posterior_joint(&x1);
        let at_mean = m.condition_on_fantasy(&x1, j.mean.as_slice()).unwrap();
        let y_any = [standard_normal(&mut r), standard_normal(&mut r)];
        let any = m.condition_on_fantasy(&x1, &y_any).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| r.random()).collect();
            let (p0, p1) = (m.posterior(&x), at_mean.posterior(&x));
            assert!((p0.mean - p1.mean).abs() < 1e-6);
            assert!(any.posterior(&x).variance <= p0.variance + 1e-8);
        }
        let seq = m
            .condition_on_fantasy(&x1[..1], &y_any[..1])
            .unwrap()
            .condition_on_fantasy(&x1[1..], &y_any[1..])
            .unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| r.random()).collect();
            assert!((seq.posterior(&x).mean - any.posterior(&x).mean).abs() < 1e-8);
        }
    }
}

#[test]
fn fantasy_gradients_match_reconditioning() {
    let mut r = rng(8);
    let mut checked = 0;
    while checked < 100 {
        let d = 1 + checked % 2;
        let q = 1 + checked % 2;
        let (m, _) = model_pair(&mut r, 4, d);
        let x1 = spread_points(&mut r, q, d, 0.1);
        let y1: Vec<f64> = (0..q).map(|_| standard_normal(&mut r)).collect();
        let x2: Vec<f64> = (0..d).map(|_| r.random()).collect();
        let g = m.fantasy_posterior_grads_wrt_batch(&x1, &y1, &x2).unwrap();
        if g.degenerate || g.sigma < 1e-3 {
            continue;
        }
        let flat: Vec<f64> = x1.iter().flatten().copied().collect();
        let unflat = |p: &[f64]| p.chunks(d).map(|c| c.to_vec()).collect::<Vec<_>>();
        let fd_m = fd_grad(&flat, 1e-5, |p| {
            m.condition_on_fantasy(&unflat(p), &y1).unwrap().posterior(&x2).mean
        });
        let fd_s = fd_grad(&flat, 1e-5, |p| {
            m.condition_on_fantasy(&unflat(p), &y1).unwrap().posterior(&x2).sd()
        });
        let an_m: Vec<f64> = (0..q)
            .flat_map(|j| (0..d).map(move |l| (j, l)))
            .map(|(j, l)| g.dmean[(j, l)])
            .collect();
        let an_s: Vec<f64> = (0..q)
            .flat_map(|j| (0..d).map(move |l| (j, l)))
            .map(|(j, l)| g.dsigma[(j, l)])
            .collect();
        assert!(rel_err(&an_m, &fd_m, 1e-6) < 1e-4, "{an_m:?} vs {fd_m:?}");
        assert!(rel_err(&an_s, &fd_s, 1e-6) < 1e-4, "{an_s:?} vs {fd_s:?}");
        checked += 1;
    }
}

#[test]
fn fantasy_gradients_vanish_far_away() {
    let k = KernelParams::new(1.0, vec![0.1]).unwrap();
    let m = GpModel::new(k, vec![vec![0.0], vec![0.3]], vec![0.2, -0.1]).unwrap();
    let g = m.fantasy_posterior_grads_wrt_batch(&[vec![5.0]], &[0.4], &[2.5]).unwrap();
    assert!(g.dmean.amax() < 1e-6 && g.dsigma.amax() < 1e-6);
    // the far batch point barely moves μ₁(x₂); the near one dominates
    let g = m
        .fantasy_posterior_grads_wrt_batch(&[vec![0.55], vec![5.0]], &[0.4, 0.0], &[0.5])
        .unwrap();
    assert!(g.dmean[(1, 0)].abs() < 1e-6 && g.dmean[(0, 0)].abs() > 1e-2);
}

#[test]
fn sample_then_fit_recovers_lengthscale() {
    let truth = SeKernel { sv: 1.0, ell: vec![0.5] };
    let mut ratios = Vec::new();
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 + r.random::<f64>()) / 30.0 * 3.0]).collect();
        let n = xs.len();
        let k = nalgebra::DMatrix::from_fn(n, n, |i, j| truth.k(&xs[i], &xs[j]) + if i == j { 1e-8 } else { 0.0 });
        let l = k.cholesky().unwrap().l();
        let z = nalgebra::DVector::from_iterator(n, (0..n).map(|_| standard_normal(&mut r)));
        let ys: Vec<f64> = (l * z).iter().copied().collect();
        let opts = FitOptions {
            seed,
            ..FitOptions::default()
        };
        let rep = fit_hyperparameters(&xs, &ys, &[3.0], &opts, None);
        ratios.push(rep.params.lengthscales[0] / 0.5);
        let best = rep.log_marginal_likelihood.unwrap();
        assert!(rep.initial_values.iter().all(|v| best >= *v - 1e-9));
        let again = log_marginal_likelihood(&xs, &ys, &rep.params).unwrap().0;
        assert!((again - best).abs() < 1e-6 * best.abs().max(1.0));
    }
    ratios.sort_by(f64::total_cmp);
    let med = 0.5 * (ratios[9] + ratios[10]);
    assert!((0.5..=2.0).contains(&med), "median ratio {med}");
}

#[test]
fn degenerate_targets_fall_back() {
    let xs = vec![vec![0.1], vec![0.7]];
    let rep = fit_hyperparameters(&xs, &[0.0, 0.0], &[2.0], &FitOptions::default(), None);
    assert!(rep.fallback);
    assert_eq!(rep.params.signal_variance, 1e-6);
    assert_eq!(rep.params.lengthscales, vec![2.0]);
}
