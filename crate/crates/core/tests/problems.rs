mod common;

use cbo::problems::{by_name, constrained_optimum_oracle, domain_max_oracle, p1, p2, p3, Problem};
use common::rng;
use rand::Rng;
use std::f64::consts::PI;

fn p1_ref(x: &[f64]) -> (f64, Vec<f64>) {
    let (a, b) = (x[0], x[1]);
    (
        f64::cos(2.0 * a) * f64::cos(b) + f64::sin(a),
        vec![f64::cos(a) * f64::cos(b) - f64::sin(a) * f64::sin(b) + 0.5],
    )
}

fn p2_ref(x: &[f64]) -> (f64, Vec<f64>) {
    let (a, b) = (x[0], x[1]);
    let g1 = 0.5 * f64::sin(2.0 * PI * (2.0 * b - a * a)) - a - 2.0 * b + 1.5;
    (a + b, vec![g1, a * a + b * b - 1.5])
}

fn p3_ref(x: &[f64]) -> (f64, Vec<f64>) {
    let mut s = 0.0;
    for v in x {
        s += v.powi(4) - 16.0 * v * v + 5.0 * v;
    }
    (
        0.5 * s,
        vec![-0.5 + f64::sin(x[0] + 2.0 * x[1]) - f64::cos(x[2]) * f64::cos(2.0 * x[3])],
    )
}

fn uniform(r: &mut rand_chacha::ChaCha8Rng, p: &Problem) -> Vec<f64> {
    (0..p.dim())
        .map(|j| p.bounds.lower()[j] + r.random::<f64>() * p.bounds.widths()[j])
        .collect()
}

#[test]
fn formulas_match_a_second_implementation() {
    let mut r = rng(40);
    type Reference = fn(&[f64]) -> (f64, Vec<f64>);
    let cases: [(Problem, Reference); 3] = [(p1(), p1_ref), (p2(), p2_ref), (p3(), p3_ref)];
    for (p, reference) in cases {
        for _ in 0..1000 {
            let x = uniform(&mut r, &p);
            assert_eq!(p.evaluate(&x), reference(&x), "{} at {x:?}", p.name);
        }
    }
    // the P1 constraint is cos(x₁ + x₂) + 0.5
    for _ in 0..1000 {
        let x = uniform(&mut r, &p1());
        assert!((p1().evaluate(&x).1[0] - ((x[0] + x[1]).cos() + 0.5)).abs() < 1e-14);
    }
}

#[test]
fn registry_lookup() {
    for name in ["p1", "p2", "p3"] {
        assert_eq!(by_name(name).unwrap().name, name);
    }
    assert_eq!(p1().n_constraints, 1);
    assert_eq!(p2().n_constraints, 2);
    assert_eq!(p3().dim(), 4);
    assert!(by_name("P1").is_err());
}

#[test]
fn two_dimensional_oracles_are_resolution_stable() {
    for p in [p1(), p2()] {
        let coarse = constrained_optimum_oracle(&p, 1000, 20).unwrap();
        let fine = constrained_optimum_oracle(&p, 2000, 20).unwrap();
        println!("{}: f* {:.12} / {:.12} at {:?}", p.name, coarse.value, fine.value, fine.point);
        assert!((coarse.value - fine.value).abs() <= 1e-4);
        for r in [&coarse, &fine] {
            assert!(p.bounds.contains(&r.point));
            assert!(p.evaluate(&r.point).1.iter().all(|g| *g <= 1e-9));
            assert_eq!(p.objective(&r.point), r.value);
        }
    }
    let coarse = domain_max_oracle(&p1(), 1000, 20);
    let fine = domain_max_oracle(&p1(), 2000, 20);
    println!("p1 domain max {:.12} / {:.12}", coarse.value, fine.value);
    assert!((coarse.value - fine.value).abs() <= 1e-4);
}

#[test]
fn p3_oracle_is_resolution_stable() {
    let p = p3();
    let coarse = constrained_optimum_oracle(&p, 30, 64).unwrap();
    let fine = constrained_optimum_oracle(&p, 60, 64).unwrap();
    println!("p3: f* {:.8} / {:.8} at {:?}", coarse.value, fine.value, fine.point);
    assert!((coarse.value - fine.value).abs() <= 1e-2);
    assert!(p.evaluate(&fine.point).1[0] <= 1e-9);
}

/// Root of `4v³ − 32v + 5` in `[−5, 0]` by bisection: the per-coordinate
/// minimizer of the P3 objective.
fn separable_minimizer() -> f64 {
    let d = |v: f64| 4.0 * v * v * v - 32.0 * v + 5.0;
    let (mut a, mut b) = (-5.0, -1.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if d(a) * d(m) <= 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    0.5 * (a + b)
}

#[test]
fn p3_objective_without_its_constraint_has_the_separable_minimum() {
    let v = separable_minimizer();
    assert!((v + 2.9035).abs() < 1e-4);
    let per = 0.5 * (v.powi(4) - 16.0 * v * v + 5.0 * v);
    let base = p3();
    let free = Problem::new("p3-free", base.bounds.clone(), 1, move |x| (base.objective(x), vec![-1.0]));
    let r = constrained_optimum_oracle(&free, 21, 16).unwrap();
    assert!((r.value - 4.0 * per).abs() < 1e-6, "{} vs {}", r.value, 4.0 * per);
    for xi in &r.point {
        assert!((xi - v).abs() < 1e-3);
    }
}
