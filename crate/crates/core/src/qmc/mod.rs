//! Low-discrepancy sampling: Owen-scrambled Sobol points and Latin hypercube designs.
//!
//! The Sobol generator uses the Joe–Kuo direction numbers and a hash-based
//! nested uniform scramble, so any (seed, index, dimension) triple maps to
//! the same point on every platform.

mod direction_numbers;

use crate::bounds::Bounds;
use crate::normal;
use direction_numbers::{MAX_DIMS, POLY, VINIT};
use rand::seq::SliceRandom;
use rand::Rng;

const BITS: usize = 32;

/// Unscrambled Sobol sequence in base 2 with 32-bit resolution.
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
}

impl Sobol {
    pub fn new(dims: usize) -> Self {
        let directions = (0..dims.min(MAX_DIMS)).map(direction_vector).collect();
        Sobol { directions }
    }

    pub fn dims(&self) -> usize {
        self.directions.len()
    }

    /// Integer coordinate of point `index` in dimension `dim`.
    #[inline]
    pub fn coordinate(&self, index: u32, dim: usize) -> u32 {
        let v = &self.directions[dim];
        let mut gray = index ^ (index >> 1);
        let mut x = 0u32;
        let mut bit = 0;
        while gray != 0 {
            if gray & 1 == 1 {
                x ^= v[bit];
            }
            gray >>= 1;
            bit += 1;
        }
        x
    }
}

fn direction_vector(dim: usize) -> [u32; BITS] {
    let mut m = [0u32; BITS];
    if dim == 0 {
        m = [1; BITS];
    } else {
        let poly = POLY[dim];
        let degree = (32 - poly.leading_zeros() - 1) as usize;
        m[..degree].copy_from_slice(&VINIT[dim][..degree]);
        for j in degree..BITS {
            let mut next = m[j - degree];
            let mut pow2 = 1u32;
            for k in 0..degree {
                pow2 <<= 1;
                if (poly >> (degree - 1 - k)) & 1 == 1 {
                    next ^= pow2.wrapping_mul(m[j - k - 1]);
                }
            }
            m[j] = next;
        }
    }
    let mut v = [0u32; BITS];
    for (j, vj) in v.iter_mut().enumerate() {
        *vj = m[j] << (BITS - 1 - j);
    }
    v
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream label into a new 64-bit seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Nested uniform (Owen) scramble of a bit-reversed integer.
#[inline]
fn owen_scramble_rev(mut x: u32, seed: u32) -> u32 {
    x = x.wrapping_add(seed);
    x ^= x.wrapping_mul(0x6c50_b47c);
    x ^= x.wrapping_mul(0xb82f_1e52);
    x ^= x.wrapping_mul(0xc7af_e638);
    x ^= x.wrapping_mul(0x8d22_f6e6);
    x
}

/// Owen-scrambled Sobol points in `(0,1)^dims`.
///
/// Dimensions beyond the direction-number table are padded by reusing the
/// table with independent scrambles.
#[derive(Debug, Clone)]
pub struct ScrambledSobol {
    sobol: Sobol,
    dims: usize,
    scrambles: Vec<u32>,
}

impl ScrambledSobol {
    pub fn new(dims: usize, seed: u64) -> Self {
        let scrambles = (0..dims).map(|d| (derive_seed(seed, d as u64) >> 32) as u32).collect();
        ScrambledSobol {
            sobol: Sobol::new(dims.max(1)),
            dims,
            scrambles,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Uniform point `index`, written into `out` (length `dims`).
    pub fn uniform(&self, index: u32, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dims);
        let table = self.sobol.dims();
        for (d, o) in out.iter_mut().enumerate() {
            let raw = self.sobol.coordinate(index, d % table);
            let scrambled = owen_scramble_rev(raw.reverse_bits(), self.scrambles[d]).reverse_bits();
            *o = (scrambled as f64 + 0.5) / 4_294_967_296.0;
        }
    }

    /// Standard normal point `index` via the inverse CDF.
    pub fn normal(&self, index: u32, out: &mut [f64]) {
        self.uniform(index, out);
        for o in out.iter_mut() {
            *o = normal::quantile(*o);
        }
    }

    /// First `n` points mapped into a box.
    pub fn points_in(&self, bounds: &Bounds, n: usize) -> Vec<Vec<f64>> {
        assert_eq!(self.dims, bounds.dim());
        let mut u = vec![0.0; self.dims];
        (0..n as u32)
            .map(|i| {
                self.uniform(i, &mut u);
                bounds.from_unit(&u)
            })
            .collect()
    }
}

/// Latin hypercube design of `n` points: one point per stratum in every dimension.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, bounds: &Bounds, rng: &mut R) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        columns.push(
            strata
                .into_iter()
                .map(|s| (s as f64 + rng.random::<f64>()) / n as f64)
                .collect(),
        );
    }
    (0..n)
        .map(|i| {
            let u: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            bounds.from_unit(&u)
        })
        .collect()
}
