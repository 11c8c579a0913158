//! Oracles shared by the integration targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

use slowlight::constants::C_NM;
use slowlight::lattice::DielectricMap;
use slowlight::pwe::{PlaneWaveOperator, ReciprocalBasis};

/// Two-layer stack along x: index `n1` over `|x| < d1/2`, `n2` elsewhere.
pub struct Stack {
    pub n1: f64,
    pub n2: f64,
    pub d1: f64,
    pub period: f64,
}

impl Stack {
    /// `cos(KΛ)` from the transfer matrix at normal incidence.
    pub fn cos_bloch(&self, nu_thz: f64) -> f64 {
        let k0 = 2.0 * PI * nu_thz * 1e12 / C_NM;
        let (p1, p2) = (self.n1 * k0 * self.d1, self.n2 * k0 * (self.period - self.d1));
        p1.cos() * p2.cos() - 0.5 * (self.n1 / self.n2 + self.n2 / self.n1) * p1.sin() * p2.sin()
    }

    /// Band-edge frequencies where `cos(KΛ) = target` (±1), below `nu_max`.
    pub fn edges(&self, target: f64, nu_max: f64) -> Vec<f64> {
        let g = |nu: f64| self.cos_bloch(nu) - target;
        let n = 20000;
        let mut out = Vec::new();
        let step = nu_max / n as f64;
        for i in 1..n {
            let (lo, hi) = (i as f64 * step, (i + 1) as f64 * step);
            if g(lo).signum() != g(hi).signum() {
                let (mut lo, mut hi) = (lo, hi);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid).signum() == g(lo).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                out.push(0.5 * (lo + hi));
            }
        }
        out
    }

    /// Plane-wave operator of the stack in a thin, y-uniform supercell.
    pub fn operator(&self, order: f64) -> PlaneWaveOperator {
        let wy = self.period / 8.0;
        let eps1 = self.n1 * self.n1;
        let eps2 = self.n2 * self.n2;
        let mut map = DielectricMap::from_fn(self.n1, self.period, wy, 256, 16, 0.0, |x, _| if x.abs() < self.d1 / 2.0 { 1.0 } else { 0.0 });
        for v in map.eps_grid.iter_mut() {
            *v = if *v > 1.5 { eps1 } else { eps2 };
        }
        PlaneWaveOperator::from_map(&map, ReciprocalBasis::with_order(self.period, wy, order)).unwrap()
    }
}

pub fn quarter_wave_like() -> Stack {
    Stack { n1: 3.2, n2: 1.45, d1: 150.0, period: 400.0 }
}

/// Worst relative error of the empty-lattice bands against folded light lines.
pub fn empty_lattice_error(k: [f64; 2], n_bands: usize) -> f64 {
    let (a, wy, eps) = (200.0, 500.0, 5.0);
    let map = DielectricMap::uniform(eps, a, wy, 32, 80);
    let basis = ReciprocalBasis::with_order(a, wy, 2.5);
    let op = PlaneWaveOperator::from_map(&map, basis.clone()).unwrap();
    let sol = op.solve_k(k, n_bands).unwrap();
    let mut exact: Vec<f64> = basis
        .g_vectors
        .iter()
        .map(|g| C_NM * ((k[0] + g[0]).powi(2) + (k[1] + g[1]).powi(2)).sqrt() / eps.sqrt() / (2.0 * PI) / 1e12)
        .collect();
    exact.sort_by(f64::total_cmp);
    (0..n_bands).map(|b| (sol.freqs[b] - exact[b]).abs() / exact[b].max(1.0)).fold(0.0, f64::max)
}

/// Worst relative error of the first two gaps of the stack (edges of bands
/// 0/1 at the zone edge and 1/2 at the zone centre).
pub fn stack_edge_error(stack: &Stack, order: f64) -> f64 {
    let op = stack.operator(order);
    let edge = op.solve_k([PI / stack.period, 0.0], 2).unwrap();
    let centre = op.solve_k([0.0, 0.0], 3).unwrap();
    let nu_max = 1.2 * centre.freqs[2];
    let at_edge = stack.edges(-1.0, nu_max);
    let at_centre = stack.edges(1.0, nu_max);
    assert!(at_edge.len() >= 2 && at_centre.len() >= 2, "oracle found {at_edge:?} {at_centre:?}");
    let pairs = [(edge.freqs[0], at_edge[0]), (edge.freqs[1], at_edge[1]), (centre.freqs[1], at_centre[0]), (centre.freqs[2], at_centre[1])];
    pairs.iter().map(|(got, want)| (got - want).abs() / want).fold(0.0, f64::max)
}

fn fact(n: i64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// Exact 3j value from doubled arguments: sign · sqrt(rational), evaluated
/// from the exact square.
pub fn racah(j1: i64, j2: i64, j3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
    if m1 + m2 + m3 != 0 || j3 > j1 + j2 || j3 < (j1 - j2).abs() || (j1 + j2 + j3) % 2 != 0 {
        return 0.0;
    }
    for (j, m) in [(j1, m1), (j2, m2), (j3, m3)] {
        if m.abs() > j || (j + m) % 2 != 0 {
            return 0.0;
        }
    }
    // undoubled integer combinations
    let h = |x: i64| x / 2;
    let tri = BigRational::new(
        fact(h(j1 + j2 - j3)) * fact(h(j1 - j2 + j3)) * fact(h(-j1 + j2 + j3)),
        fact(h(j1 + j2 + j3) + 1),
    );
    let pre = tri
        * BigRational::from_integer(
            fact(h(j1 + m1)) * fact(h(j1 - m1)) * fact(h(j2 + m2)) * fact(h(j2 - m2)) * fact(h(j3 + m3)) * fact(h(j3 - m3)),
        );
    let kmin = 0.max(h(j2 - j3 - m1)).max(h(j1 - j3 + m2));
    let kmax = h(j1 + j2 - j3).min(h(j1 - m1)).min(h(j2 + m2));
    let mut sum = BigRational::zero();
    for k in kmin..=kmax {
        let den = fact(k)
            * fact(h(j3 - j2 + m1) + k)
            * fact(h(j3 - j1 - m2) + k)
            * fact(h(j1 + j2 - j3) - k)
            * fact(h(j1 - m1) - k)
            * fact(h(j2 + m2) - k);
        let term = BigRational::new(BigInt::one(), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return 0.0;
    }
    let phase = h(j1 - j2 - m3);
    let sign = if (phase.rem_euclid(2) == 0) == sum.is_positive() { 1.0 } else { -1.0 };
    let sq = &sum * &sum * pre;
    sign * sq.to_f64().unwrap().sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct Args(pub [i64; 6]);

/// Random admissible doubled arguments with j ≤ 6.
pub fn random_args(rng: &mut impl Rng) -> Args {
    loop {
        let j1 = rng.gen_range(0..=12);
        let j2 = rng.gen_range(0..=12);
        let j3 = rng.gen_range(0..=12);
        if (j1 + j2 + j3) % 2 != 0 {
            continue;
        }
        let m = |j: i64, rng: &mut dyn rand::RngCore| if j == 0 { 0 } else { -j + 2 * rng.gen_range(0..=j) };
        let m1 = m(j1, rng);
        let m2 = m(j2, rng);
        let m3 = -m1 - m2;
        if m3.abs() > j3 || (j3 + m3) % 2 != 0 {
            continue;
        }
        return Args([j1, j2, j3, m1, m2, m3]);
    }
}
