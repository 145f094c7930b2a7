//! Quick invariant checks runnable from the command line.

use crate::acq::{self, eic, eic_grad};
use crate::gp::{BundleParams, GpModel, KernelParams, PosteriorBundle};
use crate::twostep::{self, FantasyDistribution, TwoStepConfig};
use crate::Bounds;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_bundle(rng: &mut ChaCha8Rng, n: usize, d: usize, m: usize) -> PosteriorBundle {
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let kernel = |rng: &mut ChaCha8Rng| {
        KernelParams::new(
            0.5 + rng.random::<f64>(),
            (0..d).map(|_| 0.2 + 0.3 * rng.random::<f64>()).collect(),
        )
        .unwrap()
    };
    let params = BundleParams {
        objective: kernel(rng),
        constraints: (0..m).map(|_| kernel(rng)).collect(),
    };
    let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut g: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
    for gm in &mut g {
        gm[0] = -0.1;
    }
    PosteriorBundle::from_data(&inputs, &f, &g, &params).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn interpolation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let targets: Vec<f64> = inputs.iter().map(|x| (3.0 * x[0]).sin() + x[1]).collect();
    let model = GpModel::new(
        KernelParams::new(1.0, vec![0.3, 0.3]).unwrap(),
        inputs.clone(),
        targets.clone(),
    )
    .unwrap();
    let worst = inputs
        .iter()
        .zip(&targets)
        .map(|(x, t)| {
            let p = model.posterior(x);
            (p.mean - t).abs().max(p.variance)
        })
        .fold(0.0, f64::max);
    Check {
        name: "gp interpolation",
        passed: worst <= 1e-6,
        detail: format!("max deviation {worst:.2e}"),
    }
}

fn eic_gradient() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let b = random_bundle(&mut rng, 5, 2, 1);
        let x = vec![rng.random::<f64>(), rng.random::<f64>()];
        let g = eic_grad(&b, &x).unwrap();
        if g.degenerate {
            continue;
        }
        for l in 0..2 {
            let h = 1e-6;
            let (mut a, mut c) = (x.clone(), x.clone());
            a[l] += h;
            c[l] -= h;
            let fd = (eic(&b, &a).unwrap() - eic(&b, &c).unwrap()) / (2.0 * h);
            if fd.abs().max(g.grad[l].abs()) > 1e-6 {
                worst = worst.max(rel_err(g.grad[l], fd));
            }
        }
    }
    Check {
        name: "eic gradient vs finite differences",
        passed: worst <= 1e-4,
        detail: format!("max relative error {worst:.2e}"),
    }
}

fn batch_eic_q1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let b = random_bundle(&mut rng, 4, 1, 1);
        let x = vec![vec![rng.random::<f64>()]];
        let exact = eic(&b, &x[0]).unwrap();
        let mc = acq::batch_eic_mc(&b, &x, 4096, i).unwrap();
        worst = worst.max((mc.estimate - exact).abs() / (mc.standard_error + 1e-12));
    }
    Check {
        name: "batch eic (q = 1) vs analytic eic",
        passed: worst <= 3.0,
        detail: format!("max deviation {worst:.2} standard errors"),
    }
}

fn score_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = random_bundle(&mut rng, 4, 2, 1);
    let x1 = vec![vec![0.3, 0.7], vec![0.8, 0.2]];
    let dist = FantasyDistribution::with_grads(&b, &x1).unwrap();
    let sobol = crate::qmc::ScrambledSobol::new(dist.dims(), 9);
    let n = 8192;
    let f0 = b.incumbent().map(|i| i.value).unwrap();
    let mut sum = nalgebra::DMatrix::zeros(2, 2);
    let mut sq = nalgebra::DMatrix::zeros(2, 2);
    for i in 0..n {
        let s = dist.qmc_sample(&sobol, i, f0);
        let sc = dist.score(&s.y_f, &s.y_g);
        sq += sc.component_mul(&sc);
        sum += sc;
    }
    let worst = (0..4)
        .map(|k| {
            let mean = sum[k] / n as f64;
            let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
            mean.abs() / se.max(1e-12)
        })
        .fold(0.0, f64::max);
    Check {
        name: "fantasy score has zero mean",
        passed: worst <= 3.0,
        detail: format!("max |mean| {worst:.2} standard errors"),
    }
}

fn dominance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = random_bundle(&mut rng, 4, 1, 1);
    let bounds = Bounds::cube(1, 0.0, 1.0).unwrap();
    let cfg = TwoStepConfig::desk();
    let mut worst = f64::INFINITY;
    for i in 0..5 {
        let x = vec![vec![rng.random::<f64>()]];
        let two = twostep::estimate_value(&b, &bounds, &x, &cfg, 512, i).unwrap();
        let one = acq::batch_eic_mc(&b, &x, 512, i).unwrap();
        let se = (two.standard_error.powi(2) + one.standard_error.powi(2)).sqrt();
        worst = worst.min((two.estimate - one.estimate + 3.0 * se) / se.max(1e-12));
    }
    Check {
        name: "two-step value dominates batch eic",
        passed: worst >= 0.0,
        detail: format!("smallest margin {worst:.2} standard errors"),
    }
}

/// Runs every check; all must pass for a healthy build.
pub fn run_selftest() -> Vec<Check> {
    vec![interpolation(), eic_gradient(), batch_eic_q1(), score_identity(), dominance()]
}
