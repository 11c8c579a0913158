//! Supercell plane-wave eigensolver for the effective-index 2D model.
//!
//! Only the in-plane E polarization is solved. The unknown is the Fourier
//! series of `H_z`; the operator is
//!
//! ```text
//! M_GG'(k) = (k+G)·(k+G') η_GG'      with η = [ε̂(G−G')]⁻¹
//! ```
//!
//! and `M h = (ω/c)² h`. Because `k` enters polynomially the operator is
//! stored as `|k|²·A + k_x·Bx + k_y·By + C` and reassembled per k-point.

use std::f64::consts::PI;

use faer::complex_native::c64;
use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::constants::C_NM;
use crate::error::{Error, Result};
use crate::lattice::{fourier_coefficients, DielectricMap, EpsFourier, StructureParams};

/// Minimum |overlap| accepted when following a band between k-points.
pub const TRACKING_THRESHOLD: f64 = 0.5;

// ---------------------------------------------------------------------------
// Slab reduction

/// Fundamental TE mode of a symmetric slab in vacuum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabProfile {
    pub n_eff: f64,
    /// Transverse wavenumber inside the slab (1/nm).
    pub kappa_in: f64,
    /// Decay constant outside the slab (1/nm).
    pub kappa: f64,
    /// Slab thickness (nm).
    pub t: f64,
    /// Vacuum wavelength (nm).
    pub lambda0: f64,
}

impl SlabProfile {
    /// Profile normalized to `f(0) = 1`.
    pub fn f(&self, z: f64) -> f64 {
        let h = self.t / 2.0;
        if z.abs() <= h {
            (self.kappa_in * z).cos()
        } else {
            (self.kappa_in * h).cos() * (-self.kappa * (z.abs() - h)).exp()
        }
    }

    pub fn sample(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&z| self.f(z)).collect()
    }

    /// `∫ f² dz` over |z| < t/2 (nm).
    pub fn weight_inside(&self) -> f64 {
        let h = self.t / 2.0;
        h + (2.0 * self.kappa_in * h).sin() / (2.0 * self.kappa_in)
    }

    /// `∫ f² dz` over |z| > t/2 (nm).
    pub fn weight_outside(&self) -> f64 {
        (self.kappa_in * self.t / 2.0).cos().powi(2) / self.kappa
    }

    /// z-extent weight `∫ f² dz` (nm).
    pub fn z_weight(&self) -> f64 {
        self.weight_inside() + self.weight_outside()
    }
}

/// Solves `tan(κ t/2) = γ/κ` for the fundamental TE slab mode.
pub fn slab_effective_index(n: f64, t: f64, lambda0: f64) -> SlabProfile {
    let k0 = 2.0 * PI / lambda0;
    let v = k0 * t / 2.0 * (n * n - 1.0).sqrt();
    // u = κ t/2 on (0, min(V, π/2)); F(u) = u sin u − w cos u, w = √(V² − u²)
    let f = |u: f64| {
        let w = (v * v - u * u).max(0.0).sqrt();
        u * u.sin() - w * u.cos()
    };
    let df = |u: f64| {
        let w = (v * v - u * u).max(0.0).sqrt();
        let dw = if w > 0.0 { -u / w } else { 0.0 };
        u.sin() + u * u.cos() - dw * u.cos() + w * u.sin()
    };
    let (mut lo, mut hi) = (0.0, v.min(PI / 2.0));
    let mut u = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fu = f(u);
        if fu < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let step = fu / df(u);
        let next = u - step;
        u = if next > lo && next < hi && step.is_finite() { next } else { 0.5 * (lo + hi) };
        if (hi - lo) < 1e-15 * v.max(1.0) || fu.abs() < 1e-15 {
            break;
        }
    }
    let kappa_in = 2.0 * u / t;
    let beta = ((n * k0).powi(2) - kappa_in * kappa_in).sqrt();
    let kappa = (beta * beta - k0 * k0).max(0.0).sqrt();
    SlabProfile { n_eff: beta / k0, kappa_in, kappa, t, lambda0 }
}

// ---------------------------------------------------------------------------
// Basis

/// Reciprocal vectors `G = (2πm/a, 2πn/Wy)` with `|G| ≤ cutoff`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReciprocalBasis {
    /// Reciprocal vectors (rad/nm).
    pub g_vectors: Vec<[f64; 2]>,
    /// Maximum |G| (rad/nm).
    pub cutoff: f64,
    indices: Vec<(i64, i64)>,
    pub a: f64,
    pub wy: f64,
}

impl ReciprocalBasis {
    pub fn new(a: f64, wy: f64, cutoff: f64) -> Self {
        let (bx, by) = (2.0 * PI / a, 2.0 * PI / wy);
        let mmax = (cutoff / bx).floor() as i64;
        let nmax = (cutoff / by).floor() as i64;
        let mut idx: Vec<(i64, i64, f64)> = Vec::new();
        for m in -mmax..=mmax {
            for n in -nmax..=nmax {
                let g = ((m as f64 * bx).powi(2) + (n as f64 * by).powi(2)).sqrt();
                if g <= cutoff {
                    idx.push((m, n, g));
                }
            }
        }
        idx.sort_by(|p, q| p.2.total_cmp(&q.2).then(p.0.cmp(&q.0)).then(p.1.cmp(&q.1)));
        let indices: Vec<(i64, i64)> = idx.iter().map(|&(m, n, _)| (m, n)).collect();
        let g_vectors = indices.iter().map(|&(m, n)| [m as f64 * bx, n as f64 * by]).collect();
        ReciprocalBasis { g_vectors, cutoff, indices, a, wy }
    }

    /// Cutoff at `order` reciprocal periods of the x-lattice, `|G| ≤ 2π·order/a`.
    pub fn with_order(a: f64, wy: f64, order: f64) -> Self {
        Self::new(a, wy, 2.0 * PI * order / a * (1.0 + 1e-9))
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[(i64, i64)] {
        &self.indices
    }

    pub fn max_indices(&self) -> (i64, i64) {
        self.indices.iter().fold((0, 0), |(mx, my), &(m, n)| (mx.max(m.abs()), my.max(n.abs())))
    }

    pub fn position(&self, m: i64, n: i64) -> Option<usize> {
        self.indices.iter().position(|&p| p == (m, n))
    }
}

// ---------------------------------------------------------------------------
// Operator

/// Polynomial-in-k pieces of the plane-wave operator.
#[derive(Debug, Clone)]
pub struct PlaneWaveOperator {
    pub basis: ReciprocalBasis,
    pub eps: EpsFourier,
    bx: Mat<c64>,
    by: Mat<c64>,
    c: Mat<c64>,
}

/// Eigenpairs at one k-point, sorted by frequency.
#[derive(Debug, Clone)]
pub struct KSolution {
    pub k: [f64; 2],
    /// Linear frequency (THz).
    pub freqs: Vec<f64>,
    /// Group velocity dω/dk_x in units of c (Hellmann–Feynman).
    pub vg: Vec<f64>,
    /// Columns are normalized H_z plane-wave amplitudes.
    pub vectors: Mat<c64>,
}

impl PlaneWaveOperator {
    pub fn new(basis: ReciprocalBasis, eps: EpsFourier) -> Self {
        let n = basis.len();
        let g = &basis.g_vectors;
        let eta = &eps.eta;
        let bx = Mat::<c64>::from_fn(n, n, |i, j| eta.read(i, j) * c64::new(g[i][0] + g[j][0], 0.0));
        let by = Mat::<c64>::from_fn(n, n, |i, j| eta.read(i, j) * c64::new(g[i][1] + g[j][1], 0.0));
        let c = Mat::<c64>::from_fn(n, n, |i, j| {
            eta.read(i, j) * c64::new(g[i][0] * g[j][0] + g[i][1] * g[j][1], 0.0)
        });
        PlaneWaveOperator { basis, eps, bx, by, c }
    }

    pub fn from_map(map: &DielectricMap, basis: ReciprocalBasis) -> Result<Self> {
        let eps = fourier_coefficients(map, &basis)?;
        Ok(Self::new(basis, eps))
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// `M(k)` in units of nm⁻².
    pub fn assemble(&self, k: [f64; 2]) -> Mat<c64> {
        let n = self.len();
        let k2 = c64::new(k[0] * k[0] + k[1] * k[1], 0.0);
        let (kx, ky) = (c64::new(k[0], 0.0), c64::new(k[1], 0.0));
        Mat::<c64>::from_fn(n, n, |i, j| {
            k2 * self.eps.eta.read(i, j) + kx * self.bx.read(i, j) + ky * self.by.read(i, j) + self.c.read(i, j)
        })
    }

    /// `∂M/∂k_x`.
    pub fn derivative_x(&self, k: [f64; 2]) -> Mat<c64> {
        let n = self.len();
        let two_kx = c64::new(2.0 * k[0], 0.0);
        Mat::<c64>::from_fn(n, n, |i, j| two_kx * self.eps.eta.read(i, j) + self.bx.read(i, j))
    }

    pub fn solve_k(&self, k: [f64; 2], n_bands: usize) -> Result<KSolution> {
        self.solve_k_below(k, n_bands, f64::INFINITY)
    }

    /// Lowest `n_bands` modes, further limited to frequencies below `nu_cap` (THz).
    pub fn solve_k_below(&self, k: [f64; 2], n_bands: usize, nu_cap: f64) -> Result<KSolution> {
        let m = self.assemble(k);
        let evd = m.selfadjoint_eigendecomposition(faer::Side::Lower);
        let s = evd.s().column_vector();
        let u = evd.u();
        let below = (0..self.len()).take_while(|&b| lambda_to_thz(s.read(b).re) < nu_cap).count();
        let n_bands = n_bands.min(self.len()).min(below);
        let mut freqs = Vec::with_capacity(n_bands);
        for b in 0..n_bands {
            let lam = s.read(b).re;
            if !lam.is_finite() {
                return Err(Error::Convergence(format!("non-finite eigenvalue at k = {k:?}")));
            }
            freqs.push(lambda_to_thz(lam));
        }
        let vectors = u.subcols(0, n_bands).to_owned();
        let vg = self.hellmann_feynman(k, &vectors, &freqs);
        Ok(KSolution { k, freqs, vg, vectors })
    }

    /// Exact band slopes from `dλ/dk = h† (∂M/∂k) h`.
    pub fn hellmann_feynman(&self, k: [f64; 2], vectors: &Mat<c64>, freqs: &[f64]) -> Vec<f64> {
        let dm = self.derivative_x(k);
        let prod = &dm * vectors;
        (0..vectors.ncols())
            .map(|b| {
                let mut acc = c64::new(0.0, 0.0);
                for i in 0..vectors.nrows() {
                    acc += vectors.read(i, b).faer_conj() * prod.read(i, b);
                }
                let sqrt_lam = thz_to_sqrt_lambda(freqs[b]);
                if sqrt_lam > 0.0 {
                    acc.re / (2.0 * sqrt_lam)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

use faer::ComplexField;

fn lambda_to_thz(lam: f64) -> f64 {
    C_NM * lam.max(0.0).sqrt() / (2.0 * PI) / 1e12
}

fn thz_to_sqrt_lambda(nu: f64) -> f64 {
    nu * 1e12 * 2.0 * PI / C_NM
}

/// Bloch wavevector (rad/nm) for `k_x = s·π/a`.
pub fn k_from_fraction(s: f64, a: f64) -> f64 {
    s * PI / a
}

// ---------------------------------------------------------------------------
// Bands

/// Frequencies `ν_n(k)` (THz) with overlap-based band tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    /// Bloch wavevectors k_x (rad/nm).
    pub k_samples: Vec<f64>,
    /// `freqs[i][b]` is tracked band `b` at `k_samples[i]`.
    pub freqs: Vec<Vec<f64>>,
    /// Group velocity in units of c, same layout as `freqs`.
    pub vg: Vec<Vec<f64>>,
    /// `band_tracking[i][b]` is the sorted-order index of tracked band `b`.
    pub band_tracking: Vec<Vec<usize>>,
    /// Lattice period (nm).
    pub a: f64,
    /// k-steps at which tracking was ambiguous.
    pub warnings: Vec<String>,
}

impl BandSet {
    /// Builds a band set from frequencies alone; group velocities by
    /// 3-point central differences (one-sided at the ends).
    pub fn from_frequencies(k_samples: Vec<f64>, freqs: Vec<Vec<f64>>, a: f64) -> Self {
        let n_bands = freqs.first().map_or(0, |f| f.len());
        let mut set = BandSet {
            vg: vec![vec![0.0; n_bands]; k_samples.len()],
            band_tracking: vec![(0..n_bands).collect(); k_samples.len()],
            k_samples,
            freqs,
            a,
            warnings: Vec::new(),
        };
        for b in 0..n_bands {
            let vg = set.finite_difference_vg(b);
            for (i, v) in vg.into_iter().enumerate() {
                set.vg[i][b] = v;
            }
        }
        set
    }

    pub fn n_bands(&self) -> usize {
        self.freqs.first().map_or(0, |f| f.len())
    }

    pub fn band(&self, b: usize) -> Vec<f64> {
        self.freqs.iter().map(|f| f[b]).collect()
    }

    pub fn band_vg(&self, b: usize) -> Vec<f64> {
        self.vg.iter().map(|v| v[b]).collect()
    }

    /// `v_g/c` from central differences of the tracked frequencies.
    pub fn finite_difference_vg(&self, b: usize) -> Vec<f64> {
        let n = self.k_samples.len();
        let omega: Vec<f64> = self.freqs.iter().map(|f| 2.0 * PI * f[b] * 1e12).collect();
        let k = &self.k_samples;
        (0..n)
            .map(|i| {
                let (lo, hi) = if n < 2 {
                    return 0.0;
                } else if i == 0 {
                    (0, 1)
                } else if i == n - 1 {
                    (n - 2, n - 1)
                } else {
                    (i - 1, i + 1)
                };
                (omega[hi] - omega[lo]) / (k[hi] - k[lo]) / C_NM
            })
            .collect()
    }

    /// k in units of π/a.
    pub fn k_fraction(&self, i: usize) -> f64 {
        self.k_samples[i] * self.a / PI
    }
}

/// Greedy maximum-overlap assignment of the bands at `next` to those at `prev`.
///
/// Returns `perm` with `perm[b]` the column in `next` continuing band `b`,
/// plus the weakest accepted overlap.
pub fn match_bands(prev: &Mat<c64>, next: &Mat<c64>) -> (Vec<usize>, f64) {
    let nb = prev.ncols().min(next.ncols());
    let overlap = prev.adjoint() * next;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(nb * nb);
    for i in 0..nb {
        for j in 0..nb {
            pairs.push((overlap.read(i, j).faer_abs(), i, j));
        }
    }
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut perm = vec![usize::MAX; nb];
    let mut used = vec![false; nb];
    let mut weakest: f64 = 1.0;
    for (o, i, j) in pairs {
        if perm[i] == usize::MAX && !used[j] {
            perm[i] = j;
            used[j] = true;
            weakest = weakest.min(o);
        }
    }
    (perm, weakest)
}

/// Solves every k-point (in parallel) and tracks bands by modal overlap.
pub fn solve_bands(op: &PlaneWaveOperator, a: f64, k_list: &[f64], n_bands: usize) -> Result<BandSet> {
    let solutions: Vec<KSolution> = k_list
        .par_iter()
        .map(|&k| op.solve_k([k, 0.0], n_bands))
        .collect::<Result<Vec<_>>>()?;
    Ok(track(solutions, a))
}

/// Orders per-k solutions into continuous bands.
pub fn track(solutions: Vec<KSolution>, a: f64) -> BandSet {
    let nb = solutions.iter().map(|s| s.freqs.len()).min().unwrap_or(0);
    let mut set = BandSet {
        k_samples: solutions.iter().map(|s| s.k[0]).collect(),
        freqs: Vec::with_capacity(solutions.len()),
        vg: Vec::with_capacity(solutions.len()),
        band_tracking: Vec::with_capacity(solutions.len()),
        a,
        warnings: Vec::new(),
    };
    let mut current: Vec<usize> = (0..nb).collect();
    for (i, sol) in solutions.iter().enumerate() {
        if i > 0 {
            let prev = &solutions[i - 1];
            let (perm, weakest) = match_bands(&prev.vectors.subcols(0, nb).to_owned(), &sol.vectors.subcols(0, nb).to_owned());
            current = current.iter().map(|&c| perm[c]).collect();
            if weakest < TRACKING_THRESHOLD {
                set.warnings.push(format!(
                    "ambiguous tracking between k = {:.4} and {:.4} π/a (overlap {weakest:.3})",
                    prev.k[0] * a / PI,
                    sol.k[0] * a / PI
                ));
            }
        }
        set.freqs.push(current.iter().map(|&c| sol.freqs[c]).collect());
        set.vg.push(current.iter().map(|&c| sol.vg[c]).collect());
        set.band_tracking.push(current.clone());
    }
    set
}

/// Uniform k-grid over `[0, π/a]` with `n` samples.
pub fn default_k_grid(a: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| PI / a * i as f64 / (n - 1).max(1) as f64).collect()
}

/// `n` samples of `k_x` between two fractions of π/a (inclusive).
pub fn k_window_grid(a: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| PI / a * (lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64)).collect()
}

// ---------------------------------------------------------------------------
// Modes

/// A normalized guided Bloch mode of the 2D model.
#[derive(Debug, Clone)]
pub struct BlochMode {
    pub k: f64,
    pub band: usize,
    /// Linear frequency (THz).
    pub freq: f64,
    /// Group velocity (units of c).
    pub vg: f64,
    /// Plane-wave amplitudes of D_x, D_y in units of ε₀ (normalized, m^-3/2).
    pub dx_coeffs: Vec<Complex64>,
    pub dy_coeffs: Vec<Complex64>,
    /// E_x, E_y on the map grid, index `ix * ny + iy`.
    pub ex: Vec<Complex64>,
    pub ey: Vec<Complex64>,
    pub nx: usize,
    pub ny: usize,
    pub a: f64,
    pub wy: f64,
    pub x0: f64,
    pub y0: f64,
    /// `∫_cell ε|E|² dV` of the unnormalized field (the normalization integral).
    pub norm_cell: f64,
    /// z-extent weight used in the normalization (m).
    pub z_weight: f64,
    g_vectors: Vec<[f64; 2]>,
    eps_grid: Vec<f64>,
    vacuum: Option<VacuumExpansion>,
}

/// Exact field of the vacuum strip `y_lo < y < y_hi` as evanescent x-harmonics,
/// `H_z = Σ_m [A_m e^{κ_m (y − y_hi)} + B_m e^{−κ_m (y − y_lo)}] e^{i q_m x}`.
#[derive(Debug, Clone)]
struct VacuumExpansion {
    q: Vec<f64>,
    kappa: Vec<f64>,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    y_lo: f64,
    y_hi: f64,
    conjugate: bool,
}

impl VacuumExpansion {
    /// Least-squares fit of each x-harmonic of `H_z` over the strip.
    fn fit(basis: &ReciprocalBasis, map: &DielectricMap, k: f64, freq_thz: f64, h: &[Complex64]) -> Option<Self> {
        // vacuum rows from the bottom of the supercell up to the first dielectric cell
        let first_solid = (0..map.ny).find(|&iy| (0..map.nx).any(|ix| map.eps(ix, iy) != 1.0))?;
        if first_solid < 8 {
            return None;
        }
        let y_lo = map.y0;
        let y_hi = map.y0 + first_solid as f64 * map.dy();
        let k0 = 2.0 * PI * freq_thz * 1e12 / C_NM;
        let mut harmonics: Vec<i64> = basis.indices().iter().map(|p| p.0).collect();
        harmonics.sort_unstable();
        harmonics.dedup();
        let ys: Vec<f64> = (0..first_solid).map(|iy| map.y_at(iy)).collect();
        let (mut q, mut kappa, mut a, mut b) = (vec![], vec![], vec![], vec![]);
        for m in harmonics {
            let qm = k + 2.0 * PI * m as f64 / map.a;
            let km2 = qm * qm - k0 * k0;
            if km2 <= 0.0 {
                // radiating harmonic: the mode is not guided
                return None;
            }
            let km = km2.sqrt();
            let terms: Vec<(usize, f64)> = basis
                .indices()
                .iter()
                .enumerate()
                .filter(|(_, p)| p.0 == m)
                .map(|(i, _)| (i, basis.g_vectors[i][1]))
                .collect();
            let (mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0);
            let (mut r1, mut r2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for &y in &ys {
                let hm: Complex64 = terms.iter().map(|&(i, gy)| h[i] * Complex64::from_polar(1.0, gy * y)).sum();
                let u = (km * (y - y_hi)).exp();
                let v = (-km * (y - y_lo)).exp();
                s11 += u * u;
                s12 += u * v;
                s22 += v * v;
                r1 += hm * u;
                r2 += hm * v;
            }
            let det = s11 * s22 - s12 * s12;
            let (am, bm) = if det > 1e-12 * s11 * s22 {
                ((r1 * s22 - r2 * s12) / det, (r2 * s11 - r1 * s12) / det)
            } else {
                (r1 / s11, Complex64::new(0.0, 0.0))
            };
            q.push(qm);
            kappa.push(km);
            a.push(am);
            b.push(bm);
        }
        Some(VacuumExpansion { q, kappa, a, b, y_lo, y_hi, conjugate: false })
    }

    fn contains(&self, y: f64) -> bool {
        y > self.y_lo && y < self.y_hi
    }

    /// `D = (i ∂_y H, −i ∂_x H)`, equal to E in vacuum.
    fn field(&self, x: f64, y: f64) -> [Complex64; 2] {
        let i = Complex64::i();
        let (mut dx, mut dy) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for m in 0..self.q.len() {
            let u = (self.kappa[m] * (y - self.y_hi)).exp();
            let v = (-self.kappa[m] * (y - self.y_lo)).exp();
            let ph = Complex64::from_polar(1.0, self.q[m] * x);
            let hm = self.a[m] * u + self.b[m] * v;
            let dhm = self.kappa[m] * (self.a[m] * u - self.b[m] * v);
            dx += i * dhm * ph;
            dy += self.q[m] * hm * ph;
        }
        if self.conjugate {
            [dx.conj(), dy.conj()]
        } else {
            [dx, dy]
        }
    }
}

impl BlochMode {
    /// Field at an arbitrary in-plane point (nm).
    ///
    /// In the vacuum strip below the edge the evanescent expansion is used;
    /// elsewhere the plane-wave sum of D divided by the local permittivity.
    pub fn field_at(&self, x: f64, y: f64) -> [Complex64; 2] {
        if let Some(v) = self.vacuum.as_ref().filter(|v| v.contains(y)) {
            return v.field(x, y);
        }
        self.field_series(x, y)
    }

    /// Plane-wave evaluation of `D/ε`, ignoring the vacuum expansion.
    pub fn field_series(&self, x: f64, y: f64) -> [Complex64; 2] {
        let mut dx = Complex64::new(0.0, 0.0);
        let mut dy = Complex64::new(0.0, 0.0);
        for (i, g) in self.g_vectors.iter().enumerate() {
            let ph = Complex64::from_polar(1.0, (self.k + g[0]) * x + g[1] * y);
            dx += self.dx_coeffs[i] * ph;
            dy += self.dy_coeffs[i] * ph;
        }
        let eps = self.eps_near(x, y);
        [dx / eps, dy / eps]
    }

    /// Permittivity of the grid cell containing `(x, y)`; periodic in x.
    pub fn eps_near(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.x0) / self.a).rem_euclid(1.0) * self.nx as f64;
        let fy = (y - self.y0) / self.wy * self.ny as f64;
        let ix = (fx.floor() as usize).min(self.nx - 1);
        let iy = fy.floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        self.eps_grid[ix * self.ny + iy]
    }

    pub fn grid_field(&self, ix: usize, iy: usize) -> [Complex64; 2] {
        let i = ix * self.ny + iy;
        [self.ex[i], self.ey[i]]
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        self.x0 + (ix as f64 + 0.5) * self.a / self.nx as f64
    }

    pub fn y_at(&self, iy: usize) -> f64 {
        self.y0 + (iy as f64 + 0.5) * self.wy / self.ny as f64
    }

    /// `∫ ε|E|² dV` of the stored (normalized) grid field, in SI volume units.
    pub fn energy_integral(&self, map: &DielectricMap) -> f64 {
        let da = map.dx() * map.dy() * 1e-18;
        let mut acc = 0.0;
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                let [ex, ey] = self.grid_field(ix, iy);
                acc += map.eps(ix, iy) * (ex.norm_sqr() + ey.norm_sqr());
            }
        }
        acc * da * self.z_weight
    }

    /// Mode of the opposite propagation direction (time reversal).
    pub fn reversed(&self) -> BlochMode {
        let mut m = self.clone();
        m.k = -self.k;
        m.vg = -self.vg;
        // E_{-k}(r) = E_k(r)*: coefficient at G moves to -G
        let conj_at = |c: &[Complex64]| -> Vec<Complex64> {
            self.g_vectors
                .iter()
                .map(|g| {
                    let j = self
                        .g_vectors
                        .iter()
                        .position(|h| (h[0] + g[0]).abs() < 1e-12 && (h[1] + g[1]).abs() < 1e-12)
                        .expect("basis closed under negation");
                    c[j].conj()
                })
                .collect()
        };
        m.dx_coeffs = conj_at(&self.dx_coeffs);
        m.dy_coeffs = conj_at(&self.dy_coeffs);
        if let Some(v) = m.vacuum.as_mut() {
            v.conjugate = !v.conjugate;
        }
        m.ex = self.ex.iter().map(|v| v.conj()).collect();
        m.ey = self.ey.iter().map(|v| v.conj()).collect();
        m
    }

    /// Fraction of `∫ε|E|²` located at `y < y_split`.
    pub fn energy_fraction_below(&self, map: &DielectricMap, y_split: f64) -> f64 {
        let (mut below, mut total) = (0.0, 0.0);
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                let [ex, ey] = self.grid_field(ix, iy);
                let w = map.eps(ix, iy) * (ex.norm_sqr() + ey.norm_sqr());
                total += w;
                if self.y_at(iy) < y_split {
                    below += w;
                }
            }
        }
        below / total
    }
}

/// Builds a normalized Bloch mode from column `col` of a k-point solution.
///
/// `D ∝ i∇×H` is synthesized on the map grid by FFT and divided by the local
/// permittivity; the result is scaled so `∫ε|E|² dV = 1` with the slab's
/// z-extent weight.
pub fn bloch_mode(op: &PlaneWaveOperator, map: &DielectricMap, sol: &KSolution, col: usize, slab: &SlabProfile) -> BlochMode {
    let basis = &op.basis;
    let n = basis.len();
    let k = sol.k[0];
    let mut h: Vec<Complex64> = (0..n).map(|i| {
        let v = sol.vectors.read(i, col);
        Complex64::new(v.re, v.im)
    }).collect();
    // deterministic global phase: largest amplitude real and positive
    let (imax, _) = h.iter().enumerate().fold((0, 0.0), |acc, (i, v)| if v.norm() > acc.1 + 1e-14 { (i, v.norm()) } else { acc });
    let phase = h[imax].conj() / h[imax].norm();
    for v in h.iter_mut() {
        *v *= phase;
    }
    let mut dx_c: Vec<Complex64> = (0..n).map(|i| -basis.g_vectors[i][1] * h[i]).collect();
    let mut dy_c: Vec<Complex64> = (0..n).map(|i| (k + basis.g_vectors[i][0]) * h[i]).collect();
    // E = D/ε pointwise; D has no jump at the interfaces, so it rings far less than η∗D
    let mut ex = synthesize(map, basis, k, &dx_c);
    let mut ey = synthesize(map, basis, k, &dy_c);
    for ((a, b), e) in ex.iter_mut().zip(ey.iter_mut()).zip(&map.eps_grid) {
        *a /= *e;
        *b /= *e;
    }

    let z_weight = slab.z_weight() * 1e-9;
    let da = map.dx() * map.dy() * 1e-18;
    let norm_cell: f64 = ex
        .iter()
        .zip(&ey)
        .zip(&map.eps_grid)
        .map(|((a, b), e)| e * (a.norm_sqr() + b.norm_sqr()))
        .sum::<f64>()
        * da
        * z_weight;
    let scale = 1.0 / norm_cell.sqrt();
    for v in ex.iter_mut().chain(ey.iter_mut()).chain(dx_c.iter_mut()).chain(dy_c.iter_mut()).chain(h.iter_mut()) {
        *v *= scale;
    }
    let vacuum = VacuumExpansion::fit(basis, map, k, sol.freqs[col], &h);
    BlochMode {
        k,
        band: col,
        freq: sol.freqs[col],
        vg: sol.vg[col],
        dx_coeffs: dx_c,
        dy_coeffs: dy_c,
        ex,
        ey,
        nx: map.nx,
        ny: map.ny,
        a: map.a,
        wy: map.wy,
        x0: map.x0,
        y0: map.y0,
        norm_cell,
        z_weight,
        g_vectors: basis.g_vectors.clone(),
        eps_grid: map.eps_grid.clone(),
        vacuum,
    }
}

/// Evaluates `Σ c_G e^{i(k+G)·r}` on the cell centers of `map` with one inverse FFT.
fn synthesize(map: &DielectricMap, basis: &ReciprocalBasis, k: f64, coeffs: &[Complex64]) -> Vec<Complex64> {
    let (nx, ny) = (map.nx, map.ny);
    let (xc, yc) = (map.x_at(0), map.y_at(0));
    let mut data = vec![Complex64::new(0.0, 0.0); nx * ny];
    for (i, &(m, n)) in basis.indices().iter().enumerate() {
        let g = basis.g_vectors[i];
        let ix = m.rem_euclid(nx as i64) as usize;
        let iy = n.rem_euclid(ny as i64) as usize;
        data[ix * ny + iy] += coeffs[i] * Complex64::from_polar(1.0, g[0] * xc + g[1] * yc);
    }
    let mut planner = FftPlanner::<f64>::new();
    let ifft_y = planner.plan_fft_inverse(ny);
    for row in data.chunks_mut(ny) {
        ifft_y.process(row);
    }
    let ifft_x = planner.plan_fft_inverse(nx);
    let mut col = vec![Complex64::new(0.0, 0.0); nx];
    for iy in 0..ny {
        for ix in 0..nx {
            col[ix] = data[ix * ny + iy];
        }
        ifft_x.process(&mut col);
        for ix in 0..nx {
            data[ix * ny + iy] = col[ix] * Complex64::from_polar(1.0, k * map.x_at(ix));
        }
    }
    data
}

/// Fraction of `∫|H_z|²` located at `y < y_split` for column `col` of a solution.
///
/// Cheap localization measure (no inverse-permittivity product).
pub fn h_fraction_below(op: &PlaneWaveOperator, map: &DielectricMap, sol: &KSolution, col: usize, y_split: f64) -> f64 {
    let h: Vec<Complex64> = (0..op.len())
        .map(|i| {
            let v = sol.vectors.read(i, col);
            Complex64::new(v.re, v.im)
        })
        .collect();
    let grid = synthesize(map, &op.basis, sol.k[0], &h);
    let (mut below, mut total) = (0.0, 0.0);
    for ix in 0..map.nx {
        for iy in 0..map.ny {
            let w = grid[ix * map.ny + iy].norm_sqr();
            total += w;
            if map.y_at(iy) < y_split {
                below += w;
            }
        }
    }
    below / total
}

/// A 2D mode extended along z with the slab profile.
#[derive(Debug, Clone)]
pub struct Field3D {
    pub mode: BlochMode,
    pub slab: SlabProfile,
    /// Slab material index used for the 3D energy integral.
    pub n_slab: f64,
    /// Multiplies the 2D field so the 3D cell integral is one.
    pub scale: f64,
    /// True for the counter-propagating (−x) copy.
    pub reversed: bool,
}

impl Field3D {
    pub fn field_at(&self, x: f64, y: f64, z: f64) -> [Complex64; 3] {
        let [ex, ey] = self.mode.field_at(x, y);
        let s = self.scale * self.slab.f(z);
        let (ex, ey) = (ex * s, ey * s);
        if self.reversed {
            [ex.conj(), ey.conj(), Complex64::new(0.0, 0.0)]
        } else {
            [ex, ey, Complex64::new(0.0, 0.0)]
        }
    }

    /// Same field on the precomputed grid column `(ix, iy)` at height `z`.
    pub fn grid_field(&self, ix: usize, iy: usize, z: f64) -> [Complex64; 3] {
        let [ex, ey] = self.mode.grid_field(ix, iy);
        let s = self.scale * self.slab.f(z);
        let (ex, ey) = (ex * s, ey * s);
        if self.reversed {
            [ex.conj(), ey.conj(), Complex64::new(0.0, 0.0)]
        } else {
            [ex, ey, Complex64::new(0.0, 0.0)]
        }
    }

    pub fn freq(&self) -> f64 {
        self.mode.freq
    }

    /// Group velocity along the propagation direction (units of c).
    pub fn vg(&self) -> f64 {
        self.mode.vg.abs()
    }

    pub fn a(&self) -> f64 {
        self.mode.a
    }

    /// Counter-propagating copy: `E → E*`.
    pub fn reversed(&self) -> Field3D {
        let mut f = self.clone();
        f.reversed = !self.reversed;
        f
    }

    /// `∫ ε₃D |E|² dV` over one cell (SI volume), by direct quadrature.
    pub fn energy_integral(&self, map: &DielectricMap) -> f64 {
        cell_integral_3d(&self.mode, map, &self.slab, self.n_slab) * self.scale * self.scale
    }
}

/// Cell integral of `ε₃D|E₂D f|²` where ε₃D is the material index inside the
/// slab (weighted by the dielectric fill of each column) and 1 outside.
fn cell_integral_3d(mode: &BlochMode, map: &DielectricMap, slab: &SlabProfile, n_slab: f64) -> f64 {
    let w_in = slab.weight_inside() * 1e-9;
    let w_out = slab.weight_outside() * 1e-9;
    let da = map.dx() * map.dy() * 1e-18;
    let mut acc = 0.0;
    for ix in 0..mode.nx {
        for iy in 0..mode.ny {
            let [ex, ey] = mode.grid_field(ix, iy);
            let eps_in = 1.0 + map.fill(ix, iy) * (n_slab * n_slab - 1.0);
            acc += (ex.norm_sqr() + ey.norm_sqr()) * (eps_in * w_in + w_out);
        }
    }
    acc * da
}

/// Extends a 2D mode with the slab profile and renormalizes over the 3D cell.
pub fn extend_to_3d(mode: &BlochMode, map: &DielectricMap, slab: &SlabProfile, n_slab: f64) -> Field3D {
    let integral = cell_integral_3d(mode, map, slab, n_slab);
    Field3D { mode: mode.clone(), slab: *slab, n_slab, scale: 1.0 / integral.sqrt(), reversed: false }
}

// ---------------------------------------------------------------------------
// Convenience driver

/// Default plane-wave order (|G| ≤ 2π·order/a).
pub const DEFAULT_ORDER: f64 = 4.0;

/// Map, operator and reference slab profile for one structure.
#[derive(Debug, Clone)]
pub struct Solver {
    pub params: StructureParams,
    pub map: DielectricMap,
    pub op: PlaneWaveOperator,
    pub slab: SlabProfile,
}

impl Solver {
    pub fn new(params: &StructureParams, order: f64) -> Result<Self> {
        let map = crate::lattice::build_structure(params)?;
        let basis = ReciprocalBasis::with_order(map.a, map.wy, order);
        let op = PlaneWaveOperator::from_map(&map, basis)?;
        let slab = slab_effective_index(params.n_slab, params.t, params.lambda_ref);
        Ok(Solver { params: params.clone(), map, op, slab })
    }

    pub fn solve_bands(&self, k_list: &[f64], n_bands: usize) -> Result<BandSet> {
        solve_bands(&self.op, self.map.a, k_list, n_bands)
    }

    pub fn solve_k(&self, k: f64, n_bands: usize) -> Result<KSolution> {
        self.op.solve_k([k, 0.0], n_bands)
    }

    /// Mode `band` (sorted order) at `k`.
    pub fn bloch_field(&self, k: f64, band: usize) -> Result<BlochMode> {
        let sol = self.solve_k(k, band + 1)?;
        Ok(bloch_mode(&self.op, &self.map, &sol, band, &self.slab))
    }

    pub fn mode_from(&self, sol: &KSolution, col: usize) -> BlochMode {
        bloch_mode(&self.op, &self.map, sol, col, &self.slab)
    }

    /// Field extended along z with the profile evaluated at the mode's own wavelength.
    pub fn extend(&self, mode: &BlochMode) -> Field3D {
        let lambda = crate::constants::thz_to_nm(mode.freq);
        let slab = slab_effective_index(self.params.n_slab, self.params.t, lambda);
        extend_to_3d(mode, &self.map, &slab, self.params.n_slab)
    }
}
