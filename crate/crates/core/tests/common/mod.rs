//! Shared fixtures and independent reference implementations for the integration tests.
#![allow(dead_code)]

use cbo::gp::{BundleParams, KernelParams, PosteriorBundle};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[(m − sZ)⁺]` for standard normal `Z`.
pub fn ei_ref(m: f64, s: f64) -> f64 {
    if s <= 1e-12 {
        return m.max(0.0);
    }
    m * cdf(m / s) + s * phi(m / s)
}

/// `P(N(mu, s²) ≤ 0)`.
pub fn pf_ref(mu: f64, s: f64) -> f64 {
    if s <= 1e-12 {
        return if mu <= 0.0 { 1.0 } else { 0.0 };
    }
    cdf(-mu / s)
}

/// Squared-exponential kernel with one lengthscale per input dimension.
#[derive(Debug, Clone)]
pub struct SeKernel {
    pub sv: f64,
    pub ell: Vec<f64>,
}

impl SeKernel {
    pub fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).zip(&self.ell).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
        self.sv * (-0.5 * r2).exp()
    }

    pub fn params(&self) -> KernelParams {
        KernelParams::new(self.sv, self.ell.clone()).unwrap()
    }
}

/// Plain GP posterior via a dense solve, written without reference to the library.
#[derive(Debug, Clone)]
pub struct RefGp {
    pub kernel: SeKernel,
    pub xs: Vec<Vec<f64>>,
    kinv: DMatrix<f64>,
    w: DVector<f64>,
}

impl RefGp {
    pub fn new(kernel: SeKernel, xs: Vec<Vec<f64>>, ys: &[f64]) -> Self {
        Self::with_nugget(kernel, xs, ys, 1e-10)
    }

    /// Adds `nugget_rel · sv` to the kernel-matrix diagonal.
    pub fn with_nugget(kernel: SeKernel, xs: Vec<Vec<f64>>, ys: &[f64], nugget_rel: f64) -> Self {
        let n = xs.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            kernel.k(&xs[i], &xs[j]) + if i == j { nugget_rel * kernel.sv } else { 0.0 }
        });
        let kinv = k.try_inverse().expect("kernel matrix invertible");
        let w = &kinv * DVector::from_column_slice(ys);
        RefGp { kernel, xs, kinv, w }
    }

    fn kvec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.xs.len(), self.xs.iter().map(|z| self.kernel.k(x, z)))
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.kvec(x).dot(&self.w)
    }

    pub fn cov(&self, a: &[f64], b: &[f64]) -> f64 {
        let ka = self.kvec(a);
        let kb = self.kvec(b);
        self.kernel.k(a, b) - ka.dot(&(&self.kinv * kb))
    }

    pub fn var(&self, x: &[f64]) -> f64 {
        self.cov(x, x).max(0.0)
    }
}

/// A 1-d, one-constraint instance used by the two-step oracle tests.
#[derive(Debug, Clone)]
pub struct Instance {
    pub xs: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub kf: SeKernel,
    pub kg: SeKernel,
    pub x1: f64,
}

fn draw_prior(r: &mut ChaCha8Rng, kernel: &SeKernel, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| kernel.k(&[xs[i]], &[xs[j]]) + if i == j { 1e-9 } else { 0.0 });
    let l = k.cholesky().expect("prior covariance").l();
    let z = DVector::from_iterator(n, (0..n).map(|_| standard_normal(r)));
    (l * z).iter().copied().collect()
}

pub fn standard_normal(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn separated_points(r: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    loop {
        let mut xs: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        xs.sort_by(f64::total_cmp);
        if xs.windows(2).all(|w| w[1] - w[0] > gap) {
            return xs;
        }
    }
}

impl Instance {
    /// Seeded instance with 3–6 data points drawn from the prior, at least one
    /// feasible, and a stage-one point `x1` away from the data.
    pub fn seeded(seed: u64) -> Self {
        let mut r = rng(0x5eed_0000 + seed);
        let n = 3 + (seed % 4) as usize;
        loop {
            let xs = separated_points(&mut r, n, 0.08);
            let kf = SeKernel {
                sv: 1.0,
                ell: vec![0.15 + 0.15 * r.random::<f64>()],
            };
            let kg = SeKernel {
                sv: 1.0,
                ell: vec![0.15 + 0.15 * r.random::<f64>()],
            };
            let f = draw_prior(&mut r, &kf, &xs);
            let g = draw_prior(&mut r, &kg, &xs);
            if !g.iter().any(|v| *v <= 0.0) {
                continue;
            }
            let x1 = loop {
                let c: f64 = r.random();
                if xs.iter().all(|x| (x - c).abs() > 0.05) {
                    break c;
                }
            };
            return Instance { xs, f, g, kf, kg, x1 };
        }
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.xs.iter().map(|x| vec![*x]).collect()
    }

    pub fn bundle(&self) -> PosteriorBundle {
        let params = BundleParams {
            objective: self.kf.params(),
            constraints: vec![self.kg.params()],
        };
        PosteriorBundle::from_data(&self.inputs(), &self.f, std::slice::from_ref(&self.g), &params).unwrap()
    }

    pub fn f0(&self) -> f64 {
        self.f
            .iter()
            .zip(&self.g)
            .filter(|(_, g)| **g <= 0.0)
            .map(|(f, _)| *f)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn ref_models(&self) -> (RefGp, RefGp) {
        (
            RefGp::new(self.kf.clone(), self.inputs(), &self.f),
            RefGp::new(self.kg.clone(), self.inputs(), &self.g),
        )
    }
}

/// Gauss–Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w));
    }
    out
}

/// Nodes and weights for `∫ h(z) φ(z) dz`: composite Gauss–Legendre on
/// `[-Z_MAX, Z_MAX]`, split at `breaks` so that jumps of `h` fall on panel ends,
/// with panels no wider than `panel` and `per_panel` nodes each.
pub fn normal_rule(breaks: &[f64], panel: f64, per_panel: usize) -> Vec<(f64, f64)> {
    const Z_MAX: f64 = 8.5;
    let mut cuts = vec![-Z_MAX];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|b| b.abs() < Z_MAX).collect();
    inner.sort_by(f64::total_cmp);
    cuts.extend(inner);
    cuts.push(Z_MAX);
    let mut rule = Vec::new();
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        if len < 1e-14 {
            continue;
        }
        let m = (len / panel).ceil() as usize;
        for k in 0..m {
            let a = w[0] + len * k as f64 / m as f64;
            let b = w[0] + len * (k + 1) as f64 / m as f64;
            for (z, wt) in gauss_legendre(per_panel, a, b) {
                rule.push((z, wt * phi(z)));
            }
        }
    }
    rule
}

pub const ORACLE_GRID: usize = 2001;
pub const ORACLE_PANEL: f64 = 0.05;
pub const ORACLE_NODES_PER_PANEL: usize = 4;

/// Deterministic two-step value `E[max_{x₂} α]` at `x1` for a 1-d instance:
/// quadrature over `(y_f, y_g)` and a grid argmax over `x₂ ∈ [0, 1]`.
pub fn two_step_oracle(inst: &Instance, x1: f64) -> f64 {
    two_step_oracle_with(inst, x1, ORACLE_PANEL, ORACLE_NODES_PER_PANEL, ORACLE_GRID)
}

pub fn two_step_oracle_with(inst: &Instance, x1: f64, panel: f64, per_panel: usize, grid_n: usize) -> f64 {
    let (gf, gg) = inst.ref_models();
    let f0 = inst.f0();
    let p = [x1];
    let (mf, vf) = (gf.mean(&p), gf.var(&p));
    let (mg, vg) = (gg.mean(&p), gg.var(&p));
    let (sf, sg) = (vf.sqrt(), vg.sqrt());
    let grid: Vec<f64> = (0..grid_n).map(|i| i as f64 / (grid_n - 1) as f64).collect();
    // Stage-one moments on the grid: mean = base + slope·(y − m), sd fixed.
    let moments = |gp: &RefGp, v: f64| -> Vec<(f64, f64, f64)> {
        grid.iter()
            .map(|&x| {
                let q = [x];
                let c = gp.cov(&q, &p);
                (gp.mean(&q), c / v, (gp.var(&q) - c * c / v).max(0.0).sqrt())
            })
            .collect()
    };
    let mom_f = moments(&gf, vf);
    let mom_g = moments(&gg, vg);
    let rule_f = normal_rule(&[(f0 - mf) / sf], panel, per_panel);
    let rule_g = normal_rule(&[-mg / sg], panel, per_panel);
    let pf_rows: Vec<(bool, Vec<f64>)> = rule_g
        .iter()
        .map(|&(z, _)| {
            let yg = mg + sg * z;
            (
                yg <= 0.0,
                mom_g.iter().map(|&(b, s, sd)| pf_ref(b + s * (yg - mg), sd)).collect(),
            )
        })
        .collect();
    let mut total = 0.0;
    for &(zf, wf) in &rule_f {
        let yf = mf + sf * zf;
        let ei_row = |f1: f64| -> Vec<f64> { mom_f.iter().map(|&(b, s, sd)| ei_ref(f1 - b - s * (yf - mf), sd)).collect() };
        let ei_stay = ei_row(f0);
        let ei_move = (yf < f0).then(|| ei_row(yf));
        for (&(_, wg), (feasible, pf)) in rule_g.iter().zip(&pf_rows) {
            let (f1, ei) = match (&ei_move, feasible) {
                (Some(row), true) => (yf, row),
                _ => (f0, &ei_stay),
            };
            let best = ei.iter().zip(pf).map(|(e, p)| e * p).fold(0.0, f64::max);
            total += wf * wg * (f0 - f1 + best);
        }
    }
    total
}

/// Uniform points in `[0, 1]^d` at least `gap` apart.
pub fn spread_points(r: &mut ChaCha8Rng, n: usize, d: usize, gap: f64) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    while pts.len() < n {
        let c: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
        if pts.iter().all(|p| dist(p, &c) > gap) {
            pts.push(c);
        }
    }
    pts
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn random_kernel(r: &mut ChaCha8Rng, d: usize) -> SeKernel {
    SeKernel {
        sv: 0.5 + r.random::<f64>(),
        ell: (0..d).map(|_| 0.2 + 0.3 * r.random::<f64>()).collect(),
    }
}

/// Random bundle on `[0, 1]^d` with `n` points, `m` constraints and at least one
/// feasible observation; targets are smooth functions so fits stay well posed.
pub fn random_bundle(r: &mut ChaCha8Rng, n: usize, d: usize, m: usize) -> PosteriorBundle {
    loop {
        let xs = spread_points(r, n, d, 0.1);
        let kf = random_kernel(r, d);
        let f: Vec<f64> = xs.iter().map(|_| standard_normal(r)).collect();
        let kgs: Vec<SeKernel> = (0..m).map(|_| random_kernel(r, d)).collect();
        let g: Vec<Vec<f64>> = (0..m)
            .map(|_| xs.iter().map(|_| standard_normal(r) - 0.3).collect())
            .collect();
        if !(0..n).any(|i| g.iter().all(|gm| gm[i] <= 0.0)) {
            continue;
        }
        let params = BundleParams {
            objective: kf.params(),
            constraints: kgs.iter().map(|k| k.params()).collect(),
        };
        return PosteriorBundle::from_data(&xs, &f, &g, &params).unwrap();
    }
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num = dist(a, b);
    let den = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(floor);
    num / den
}

/// Central difference gradient of `f` at `x`.
pub fn fd_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|l| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[l] += h;
            m[l] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}
