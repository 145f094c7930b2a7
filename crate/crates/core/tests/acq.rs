mod common;

use cbo::acq::{batch_eic_mc, ei, eic, eic_grad, pf, pf_product};
use cbo::gp::{BundleParams, PosteriorBundle};
use common::*;
use rand::Rng;

fn refs(b: &PosteriorBundle) -> (RefGp, Vec<RefGp>) {
    let xs = b.objective.inputs().to_vec();
    let to_se = |k: &cbo::gp::KernelParams| SeKernel {
        sv: k.signal_variance,
        ell: k.lengthscales.clone(),
    };
    let f = RefGp::with_nugget(to_se(b.objective.kernel()), xs.clone(), b.objective.targets(), 1e-8);
    let g = b
        .constraints
        .iter()
        .map(|c| RefGp::with_nugget(to_se(c.kernel()), xs.clone(), c.targets(), 1e-8))
        .collect();
    (f, g)
}

fn f0(b: &PosteriorBundle) -> f64 {
    b.incumbent().unwrap().value
}

/// Best of 64 random points by EIC, so the comparison is not between zeros.
fn interesting_point(r: &mut rand_chacha::ChaCha8Rng, b: &PosteriorBundle) -> Vec<f64> {
    (0..64)
        .map(|_| (0..b.dim()).map(|_| r.random::<f64>()).collect::<Vec<f64>>())
        .max_by(|a, c| eic(b, a).unwrap().total_cmp(&eic(b, c).unwrap()))
        .unwrap()
}

#[test]
fn closed_forms_agree_with_reference() {
    let mut r = rng(10);
    for _ in 0..1000 {
        let m = 4.0 * standard_normal(&mut r);
        let s = 3.0 * r.random::<f64>();
        assert!((ei(m, s * s).unwrap() - ei_ref(m, s)).abs() < 1e-12 * (1.0 + m.abs()));
        assert!((pf(m, s * s).unwrap() - pf_ref(m, s)).abs() < 1e-14);
    }
    assert!(ei(0.0, -1.0).is_err() && pf(0.0, -1.0).is_err());
}

#[test]
fn eic_matches_independent_posterior_draws() {
    let mut r = rng(11);
    let b = random_bundle(&mut r, 5, 2, 1);
    let (rf, rg) = refs(&b);
    let x = interesting_point(&mut r, &b);
    let (mf, sf) = (rf.mean(&x), rf.var(&x).sqrt());
    let (mg, sg) = (rg[0].mean(&x), rg[0].var(&x).sqrt());
    let best = f0(&b);
    let n = 1_000_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let f = mf + sf * standard_normal(&mut r);
        let g = mg + sg * standard_normal(&mut r);
        let v = if g <= 0.0 { (best - f).max(0.0) } else { 0.0 };
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    let a = eic(&b, &x).unwrap();
    assert!(a > 1e-3 && (a - mean).abs() <= 3.0 * se, "eic {a} vs mc {mean} ± {se}");
}

#[test]
fn eic_never_exceeds_its_ei_factor() {
    let mut r = rng(12);
    for _ in 0..20 {
        let b = random_bundle(&mut r, 6, 2, 2);
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| r.random()).collect();
            let p = b.objective.posterior(&x);
            let e = ei(f0(&b) - p.mean, p.variance).unwrap();
            let v = eic(&b, &x).unwrap();
            assert!(v <= e + 1e-15);
            assert!((v - e * pf_product(b.active_constraints(), &x)).abs() < 1e-14);
        }
    }
}

#[test]
fn eic_gradient_matches_finite_differences() {
    let mut r = rng(13);
    let mut checked = 0;
    while checked < 100 {
        let b = random_bundle(&mut r, 6, 2, 1 + checked % 2);
        let x: Vec<f64> = (0..2).map(|_| r.random()).collect();
        let g = eic_grad(&b, &x).unwrap();
        if g.degenerate || g.value < 1e-8 {
            continue;
        }
        let fd = fd_grad(&x, 1e-6, |p| eic(&b, p).unwrap());
        assert!(rel_err(&g.grad, &fd, 1e-8) < 1e-4, "{:?} vs {fd:?}", g.grad);
        checked += 1;
    }
}

#[test]
fn symmetric_configuration_has_zero_gradient() {
    let params = BundleParams {
        objective: SeKernel { sv: 1.0, ell: vec![0.3] }.params(),
        constraints: vec![SeKernel { sv: 1.0, ell: vec![0.3] }.params()],
    };
    let b = PosteriorBundle::from_data(&[vec![0.2], vec![0.6]], &[0.5, 0.5], &[vec![-10.0, -10.0]], &params).unwrap();
    assert!(eic_grad(&b, &[0.4]).unwrap().grad[0].abs() < 1e-8);
}

#[test]
fn single_point_batch_matches_eic() {
    let mut r = rng(14);
    for _ in 0..20 {
        let b = random_bundle(&mut r, 5, 2, 1);
        let x = interesting_point(&mut r, &b);
        let est = batch_eic_mc(&b, std::slice::from_ref(&x), 4096, r.random()).unwrap();
        let exact = eic(&b, &x).unwrap();
        assert!(
            (est.estimate - exact).abs() <= 3.0 * est.standard_error + 1e-12,
            "{est:?} vs {exact}"
        );
    }
}

#[test]
fn adding_a_point_never_lowers_batch_value() {
    let mut r = rng(15);
    for _ in 0..10 {
        let b = random_bundle(&mut r, 5, 2, 1);
        let a: Vec<f64> = (0..2).map(|_| r.random()).collect();
        let c: Vec<f64> = (0..2).map(|_| r.random()).collect();
        let one = batch_eic_mc(&b, std::slice::from_ref(&a), 4096, 3).unwrap();
        let two = batch_eic_mc(&b, &[a, c], 4096, 3).unwrap();
        let se = (one.standard_error.powi(2) + two.standard_error.powi(2)).sqrt();
        assert!(two.estimate >= one.estimate - 3.0 * se);
    }
}

/// `E[max_i (f₀ − f_i)⁺ 1{g_i ≤ 0}]` for a two-point batch by nested quadrature:
/// the feasibility pattern probabilities and the objective expectations are
/// independent, and `E[max(u, (c − F)⁺)] = u + EI(c − u − m, s)` for `u ≥ 0`.
fn two_point_oracle(best: f64, mf: [f64; 2], cf: [[f64; 2]; 2], mg: [f64; 2], cg: [[f64; 2]; 2]) -> f64 {
    let cond = |m: [f64; 2], c: [[f64; 2]; 2], z0: f64| {
        let s0 = c[0][0].sqrt();
        let y0 = m[0] + s0 * z0;
        let mean1 = m[1] + c[0][1] / c[0][0] * (y0 - m[0]);
        let sd1 = (c[1][1] - c[0][1] * c[0][1] / c[0][0]).max(0.0).sqrt();
        (y0, mean1, sd1)
    };
    // P(g_0 ≤ 0, g_1 ≤ 0)
    let rule_g = normal_rule(&[-mg[0] / cg[0][0].sqrt()], 0.02, 6);
    let mut p_both = 0.0;
    for &(z, w) in &rule_g {
        let (y0, m1, s1) = cond(mg, cg, z);
        if y0 <= 0.0 {
            p_both += w * pf_ref(m1, s1);
        }
    }
    let p0 = pf_ref(mg[0], cg[0][0].sqrt());
    let p1 = pf_ref(mg[1], cg[1][1].sqrt());
    let e0 = ei_ref(best - mf[0], cf[0][0].sqrt());
    let e1 = ei_ref(best - mf[1], cf[1][1].sqrt());
    let rule_f = normal_rule(&[(best - mf[0]) / cf[0][0].sqrt()], 0.02, 6);
    let mut e_max = 0.0;
    for &(z, w) in &rule_f {
        let (y0, m1, s1) = cond(mf, cf, z);
        let u = (best - y0).max(0.0);
        e_max += w * (u + ei_ref(best - u - m1, s1));
    }
    p_both * e_max + (p0 - p_both) * e0 + (p1 - p_both) * e1
}

#[test]
fn two_point_batch_matches_quadrature() {
    let inst = Instance::seeded(3);
    let b = inst.bundle();
    let kf = inst.kf.clone();
    let kg = inst.kg.clone();
    let rf = RefGp::with_nugget(kf, inst.inputs(), &inst.f, 1e-8);
    let rg = RefGp::with_nugget(kg, inst.inputs(), &inst.g, 1e-8);
    let batch = [vec![inst.x1], vec![(inst.x1 + 0.37) % 1.0]];
    let moments = |gp: &RefGp| {
        let m = [gp.mean(&batch[0]), gp.mean(&batch[1])];
        let c01 = gp.cov(&batch[0], &batch[1]);
        (m, [[gp.var(&batch[0]), c01], [c01, gp.var(&batch[1])]])
    };
    let (mf, cf) = moments(&rf);
    let (mg, cg) = moments(&rg);
    let oracle = two_point_oracle(inst.f0(), mf, cf, mg, cg);
    let est = batch_eic_mc(&b, &batch, 1 << 16, 7).unwrap();
    assert!((est.estimate - oracle).abs() < 1e-2, "mc {est:?} vs oracle {oracle}");
    assert!((est.estimate - oracle).abs() < 4.0 * est.standard_error.max(1e-6));
}
