//! Half-W1 geometry and its dielectric representation on a periodic supercell.
//!
//! Coordinates: propagation along `x`, the slab edge is the line `y = 0` with
//! vacuum below it. Hole rows run parallel to the edge; row `i` (1-based) has
//! its centers at `y = L + r + (i-1)·a·√3/2 (+ dy_i)` and alternate rows are
//! shifted by `a/2` along `x`. Row 1 sits on the column `x = ±a/2`, row 2 on
//! `x = 0`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pwe::slab_effective_index;
use crate::pwe::ReciprocalBasis;

/// Supersampling factor per axis for boundary cells.
const SUBSAMPLES: usize = 8;
/// Minimum grid points per lattice period.
pub const MIN_POINTS_PER_PERIOD: usize = 32;
/// Rows that may carry a perturbation.
pub const PERTURBED_ROWS: u32 = 3;

/// Position and radius change of one hole row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowPerturbation {
    /// Row number counted from the edge, starting at 1.
    pub index: u32,
    /// Shift along y (nm).
    #[serde(rename = "dy_nm")]
    pub dy: f64,
    /// Radius change (nm).
    #[serde(rename = "dr_nm")]
    pub dr: f64,
}

/// Real-space sampling of one supercell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
}

/// Full parametric half-W1 geometry. Lengths in nm.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureParams {
    /// Lattice period.
    pub a: f64,
    /// Nominal hole radius.
    pub r: f64,
    /// Width of the unpatterned strip between the edge and the first hole rim.
    pub l: f64,
    /// Slab thickness.
    pub t: f64,
    /// Refractive index of the slab material.
    pub n_slab: f64,
    pub rows: Vec<RowPerturbation>,
    /// Number of hole rows in the supercell.
    pub n_rows: usize,
    /// Vacuum margin below the edge.
    pub w_vac: f64,
    /// Solid margin above the last row center.
    pub w_cap: f64,
    pub grid: GridSpec,
    /// Wavelength at which the slab effective index is evaluated.
    pub lambda_ref: f64,
    /// +1 moves holes away from the edge for positive `dy`, -1 toward it.
    pub dy_sign: f64,
}

/// A circular hole (nm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hole {
    pub row: u32,
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl StructureParams {
    /// Geometry of the design: a = 212, r = 63, L = 337, t = 150 nm in n = 3.34.
    pub fn paper_unperturbed() -> Self {
        let mut p = StructureParams {
            a: 212.0,
            r: 63.0,
            l: 337.0,
            t: 150.0,
            n_slab: 3.34,
            rows: Vec::new(),
            n_rows: 10,
            w_vac: 1200.0,
            w_cap: 212.0 * 3f64.sqrt() / 2.0,
            grid: GridSpec { nx: 32, ny: 0 },
            lambda_ref: 780.24,
            dy_sign: 1.0,
        };
        p.grid.ny = p.default_ny(MIN_POINTS_PER_PERIOD);
        p
    }

    /// Unperturbed geometry with the optimized row shifts and radii.
    pub fn paper_optimized() -> Self {
        let mut p = Self::paper_unperturbed();
        p.rows = vec![
            RowPerturbation { index: 1, dy: 42.7, dr: 14.2 },
            RowPerturbation { index: 2, dy: 53.8, dr: -11.2 },
            RowPerturbation { index: 3, dy: -3.7, dr: -10.8 },
        ];
        p
    }

    pub fn row_spacing(&self) -> f64 {
        self.a * 3f64.sqrt() / 2.0
    }

    /// Upper boundary of the patterned region.
    pub fn y_top(&self) -> f64 {
        self.l + self.r + (self.n_rows.max(1) - 1) as f64 * self.row_spacing() + self.w_cap
    }

    /// Supercell height.
    pub fn wy(&self) -> f64 {
        self.w_vac + self.y_top()
    }

    /// Smallest `ny` giving `points_per_period` samples per `a` along y.
    pub fn default_ny(&self, points_per_period: usize) -> usize {
        let ny = (self.wy() / self.a * points_per_period as f64).ceil() as usize;
        ny + ny % 2
    }

    pub fn perturbation(&self, row: u32) -> (f64, f64) {
        self.rows
            .iter()
            .filter(|p| p.index == row)
            .fold((0.0, 0.0), |(dy, dr), p| (dy + p.dy, dr + p.dr))
    }

    /// The six perturbation parameters `(dy1, dr1, dy2, dr2, dy3, dr3)`.
    pub fn perturbation_vector(&self) -> [f64; 6] {
        let mut v = [0.0; 6];
        for row in 1..=PERTURBED_ROWS {
            let (dy, dr) = self.perturbation(row);
            v[2 * (row as usize - 1)] = dy;
            v[2 * (row as usize - 1) + 1] = dr;
        }
        v
    }

    /// Copy with the perturbation rows replaced by a 6-vector.
    pub fn with_perturbation_vector(&self, v: &[f64; 6]) -> Self {
        let mut p = self.clone();
        p.rows = (1..=PERTURBED_ROWS)
            .map(|row| RowPerturbation {
                index: row,
                dy: v[2 * (row as usize - 1)],
                dr: v[2 * (row as usize - 1) + 1],
            })
            .collect();
        p
    }

    /// Hole centers and radii of one period (one hole per row).
    pub fn holes(&self) -> Vec<Hole> {
        (1..=self.n_rows as u32)
            .map(|row| {
                let (dy, dr) = self.perturbation(row);
                let x = if row % 2 == 1 { self.a / 2.0 } else { 0.0 };
                let y = self.l + self.r + (row - 1) as f64 * self.row_spacing() + self.dy_sign * dy;
                Hole { row, x, y, r: self.r + dr }
            })
            .collect()
    }

    /// Checks every geometric invariant.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.r, self.l, self.t, self.n_slab, self.w_vac, self.w_cap, self.lambda_ref];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite geometry parameter".into()));
        }
        if self.a <= 0.0 || self.t <= 0.0 || self.l < 0.0 || self.r < 0.0 {
            return Err(Error::Config("require a > 0, t > 0, L >= 0, r >= 0".into()));
        }
        if self.n_slab <= 1.0 {
            return Err(Error::Config("n_slab must exceed 1".into()));
        }
        if self.n_rows == 0 {
            return Err(Error::Config("n_rows must be at least 1".into()));
        }
        if self.w_vac < 0.0 || self.w_cap < 0.0 || self.lambda_ref <= 0.0 {
            return Err(Error::Config("margins must be >= 0 and lambda_ref > 0".into()));
        }
        if self.dy_sign != 1.0 && self.dy_sign != -1.0 {
            return Err(Error::Config("dy_sign must be +1 or -1".into()));
        }
        for p in &self.rows {
            if p.index < 1 || p.index > PERTURBED_ROWS {
                return Err(Error::Config(format!(
                    "row {} cannot be perturbed; only rows 1..={PERTURBED_ROWS} carry perturbations",
                    p.index
                )));
            }
            if !p.dy.is_finite() || !p.dr.is_finite() {
                return Err(Error::Config("non-finite perturbation".into()));
            }
        }
        if self.r == 0.0 {
            // no holes at all: only the uniform strip
            return Ok(());
        }
        let holes = self.holes();
        for h in &holes {
            if h.r <= 0.0 {
                return Err(Error::Overlap(format!("row {} has non-positive radius {:.3} nm", h.row, h.r)));
            }
            if 2.0 * h.r >= self.a {
                return Err(Error::Overlap(format!("row {} holes touch along x (r = {:.3} nm)", h.row, h.r)));
            }
        }
        let first = &holes[0];
        if first.y - first.r <= 0.0 {
            return Err(Error::Overlap(format!(
                "first-row hole crosses the edge (lower rim at y = {:.3} nm)",
                first.y - first.r
            )));
        }
        for pair in holes.windows(2) {
            let (h0, h1) = (&pair[0], &pair[1]);
            let dist = ((self.a / 2.0).powi(2) + (h1.y - h0.y).powi(2)).sqrt();
            if dist <= h0.r + h1.r || h1.y <= h0.y {
                return Err(Error::Overlap(format!("rows {} and {} overlap", h0.row, h1.row)));
            }
        }
        let last = holes.last().unwrap();
        if last.y + last.r > self.y_top() {
            return Err(Error::Overlap(format!("row {} crosses the top of the supercell", last.row)));
        }
        Ok(())
    }
}

/// Relative permittivity sampled on a uniform grid over one supercell.
///
/// Cell `(ix, iy)` is centered at `x = x0 + (ix + 1/2)·a/nx`,
/// `y = y0 + (iy + 1/2)·Wy/ny` with `x0 = -a/2` and `y0 = -w_vac`.
#[derive(Debug, Clone, PartialEq)]
pub struct DielectricMap {
    /// Row-major in x: index `ix * ny + iy`.
    pub eps_grid: Vec<f64>,
    pub nx: usize,
    pub ny: usize,
    /// Period along x (nm).
    pub a: f64,
    /// Supercell height (nm).
    pub wy: f64,
    pub x0: f64,
    pub y0: f64,
    /// Effective index of the dielectric regions.
    pub n_eff: f64,
}

impl DielectricMap {
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn cell_vectors(&self) -> (f64, f64) {
        (self.a, self.wy)
    }

    pub fn dx(&self) -> f64 {
        self.a / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.wy / self.ny as f64
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        self.x0 + (ix as f64 + 0.5) * self.dx()
    }

    pub fn y_at(&self, iy: usize) -> f64 {
        self.y0 + (iy as f64 + 0.5) * self.dy()
    }

    pub fn eps(&self, ix: usize, iy: usize) -> f64 {
        self.eps_grid[ix * self.ny + iy]
    }

    /// Fraction of the cell occupied by dielectric, in `[0, 1]`.
    pub fn fill(&self, ix: usize, iy: usize) -> f64 {
        (self.eps(ix, iy) - 1.0) / (self.n_eff * self.n_eff - 1.0)
    }

    /// Area-weighted mean permittivity.
    pub fn mean_eps(&self) -> f64 {
        self.eps_grid.iter().sum::<f64>() / self.eps_grid.len() as f64
    }

    /// A map filled with a constant permittivity (test and calibration helper).
    pub fn uniform(eps: f64, a: f64, wy: f64, nx: usize, ny: usize) -> Self {
        DielectricMap {
            eps_grid: vec![eps; nx * ny],
            nx,
            ny,
            a,
            wy,
            x0: -a / 2.0,
            y0: 0.0,
            n_eff: eps.sqrt(),
        }
    }

    /// A map defined by a fill-fraction callback evaluated at cell centers.
    pub fn from_fn(n_eff: f64, a: f64, wy: f64, nx: usize, ny: usize, y0: f64, fill: impl Fn(f64, f64) -> f64) -> Self {
        let mut map = DielectricMap { eps_grid: vec![1.0; nx * ny], nx, ny, a, wy, x0: -a / 2.0, y0, n_eff };
        let contrast = n_eff * n_eff - 1.0;
        for ix in 0..nx {
            for iy in 0..ny {
                let f = fill(map.x_at(ix), map.y_at(iy)).clamp(0.0, 1.0);
                map.eps_grid[ix * ny + iy] = 1.0 + contrast * f;
            }
        }
        map
    }
}

/// Builds the anti-aliased permittivity map of one supercell.
///
/// Dielectric regions carry the effective index of the slab at
/// `params.lambda_ref`; holes and the half-space `y < 0` are vacuum.
pub fn build_structure(params: &StructureParams) -> Result<DielectricMap> {
    params.validate()?;
    let GridSpec { nx, ny } = params.grid;
    let wy = params.wy();
    if nx < MIN_POINTS_PER_PERIOD || (ny as f64) < wy / params.a * MIN_POINTS_PER_PERIOD as f64 - 1e-9 {
        return Err(Error::Resolution(format!(
            "grid {nx}x{ny} gives fewer than {MIN_POINTS_PER_PERIOD} points per period"
        )));
    }
    let n_eff = slab_effective_index(params.n_slab, params.t, params.lambda_ref).n_eff;
    let contrast = n_eff * n_eff - 1.0;
    let mut map = DielectricMap {
        eps_grid: vec![0.0; nx * ny],
        nx,
        ny,
        a: params.a,
        wy,
        x0: -params.a / 2.0,
        y0: -params.w_vac,
        n_eff,
    };
    let hy = map.dy();

    // Dielectric fill: half-space y > 0, exact per cell along y.
    let mut fill = vec![0.0; nx * ny];
    for iy in 0..ny {
        let lo = map.y0 + iy as f64 * hy;
        let f = ((lo + hy).min(params.y_top()) - lo.max(0.0)).max(0.0) / hy;
        for ix in 0..nx {
            fill[ix * ny + iy] = f;
        }
    }

    // Subtract holes, including their periodic images along x.
    if params.r > 0.0 {
        for hole in params.holes() {
            for image in [-1.0, 0.0, 1.0] {
                let cx = hole.x + image * params.a;
                subtract_disk(&map, &mut fill, cx, hole.y, hole.r);
            }
        }
    }

    for (e, f) in map.eps_grid.iter_mut().zip(&fill) {
        *e = 1.0 + contrast * f.clamp(0.0, 1.0);
    }
    Ok(map)
}

fn subtract_disk(map: &DielectricMap, fill: &mut [f64], cx: f64, cy: f64, r: f64) {
    let (hx, hy) = (map.dx(), map.dy());
    let ix_lo = ((cx - r - map.x0) / hx).floor().max(0.0) as usize;
    let ix_hi = (((cx + r - map.x0) / hx).ceil() as isize).clamp(0, map.nx as isize) as usize;
    let iy_lo = ((cy - r - map.y0) / hy).floor().max(0.0) as usize;
    let iy_hi = (((cy + r - map.y0) / hy).ceil() as isize).clamp(0, map.ny as isize) as usize;
    let half_diag = 0.5 * (hx * hx + hy * hy).sqrt();
    for ix in ix_lo..ix_hi {
        for iy in iy_lo..iy_hi {
            let (xc, yc) = (map.x_at(ix), map.y_at(iy));
            let d = ((xc - cx).powi(2) + (yc - cy).powi(2)).sqrt();
            let covered = if d + half_diag <= r {
                1.0
            } else if d - half_diag >= r {
                0.0
            } else {
                let mut inside = 0usize;
                for sx in 0..SUBSAMPLES {
                    for sy in 0..SUBSAMPLES {
                        let px = xc - hx / 2.0 + (sx as f64 + 0.5) * hx / SUBSAMPLES as f64;
                        let py = yc - hy / 2.0 + (sy as f64 + 0.5) * hy / SUBSAMPLES as f64;
                        if (px - cx).powi(2) + (py - cy).powi(2) < r * r {
                            inside += 1;
                        }
                    }
                }
                inside as f64 / (SUBSAMPLES * SUBSAMPLES) as f64
            };
            let idx = ix * map.ny + iy;
            fill[idx] -= covered;
        }
    }
}

/// Fourier coefficients of the permittivity restricted to a plane-wave basis.
#[derive(Debug, Clone)]
pub struct EpsFourier {
    /// `eps_hat[i][j] = ε̂(G_i − G_j)`, row-major `n_g × n_g`.
    pub eps_hat: faer::Mat<faer::complex_native::c64>,
    /// Inverse of `eps_hat` (inverse rule for the in-plane E polarization).
    pub eta: faer::Mat<faer::complex_native::c64>,
}

impl EpsFourier {
    pub fn len(&self) -> usize {
        self.eps_hat.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eps_at(&self, i: usize, j: usize) -> Complex64 {
        let v = self.eps_hat.read(i, j);
        Complex64::new(v.re, v.im)
    }

    pub fn eta_at(&self, i: usize, j: usize) -> Complex64 {
        let v = self.eta.read(i, j);
        Complex64::new(v.re, v.im)
    }
}

/// Table of `ε̂(m, n)` for all integer frequency pairs resolved by the grid.
#[derive(Debug, Clone)]
pub struct EpsSpectrum {
    nx: usize,
    ny: usize,
    coeffs: Vec<Complex64>,
}

impl EpsSpectrum {
    /// `ε̂` for `G = (2πm/a, 2πn/Wy)`; indices wrap modulo the grid.
    pub fn coefficient(&self, m: i64, n: i64) -> Complex64 {
        let ix = m.rem_euclid(self.nx as i64) as usize;
        let iy = n.rem_euclid(self.ny as i64) as usize;
        self.coeffs[ix * self.ny + iy]
    }

    /// Largest |m|, |n| representable without aliasing.
    pub fn nyquist(&self) -> (i64, i64) {
        ((self.nx as i64 - 1) / 2, (self.ny as i64 - 1) / 2)
    }
}

/// 2D FFT of the map with the cell-averaging (box) response divided out, so
/// that coefficients approximate the transform of the sharp-edged structure.
pub fn eps_spectrum(map: &DielectricMap) -> EpsSpectrum {
    let (nx, ny) = (map.nx, map.ny);
    let mut data: Vec<Complex64> = map.eps_grid.iter().map(|&e| Complex64::new(e, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft_y = planner.plan_fft_forward(ny);
    for row in data.chunks_mut(ny) {
        fft_y.process(row);
    }
    let fft_x = planner.plan_fft_forward(nx);
    let mut col = vec![Complex64::new(0.0, 0.0); nx];
    for iy in 0..ny {
        for ix in 0..nx {
            col[ix] = data[ix * ny + iy];
        }
        fft_x.process(&mut col);
        for ix in 0..nx {
            data[ix * ny + iy] = col[ix];
        }
    }
    let norm = 1.0 / (nx * ny) as f64;
    let (hx, hy) = (map.dx(), map.dy());
    let (xc, yc) = (map.x_at(0), map.y_at(0));
    for ix in 0..nx {
        let m = if ix <= nx / 2 { ix as f64 } else { ix as f64 - nx as f64 };
        let gx = 2.0 * PI * m / map.a;
        for iy in 0..ny {
            let n = if iy <= ny / 2 { iy as f64 } else { iy as f64 - ny as f64 };
            let gy = 2.0 * PI * n / map.wy;
            let phase = Complex64::from_polar(1.0, -(gx * xc + gy * yc));
            let box_response = sinc(gx * hx / 2.0) * sinc(gy * hy / 2.0);
            data[ix * ny + iy] *= phase * norm / box_response;
        }
    }
    EpsSpectrum { nx, ny, coeffs: data }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Builds `ε̂(G − G')` over the basis and its inverse.
pub fn fourier_coefficients(map: &DielectricMap, basis: &ReciprocalBasis) -> Result<EpsFourier> {
    let spectrum = eps_spectrum(map);
    fourier_from_spectrum(&spectrum, basis)
}

pub fn fourier_from_spectrum(spectrum: &EpsSpectrum, basis: &ReciprocalBasis) -> Result<EpsFourier> {
    use faer::complex_native::c64;
    let (mx, ny) = basis.max_indices();
    let (lim_x, lim_y) = spectrum.nyquist();
    if 2 * mx > lim_x || 2 * ny > lim_y {
        return Err(Error::Cutoff(format!(
            "basis needs |m| <= {}, |n| <= {} but grid resolves {lim_x}, {lim_y}",
            2 * mx,
            2 * ny
        )));
    }
    let idx = basis.indices();
    let n = idx.len();
    let mut eps_hat = faer::Mat::<c64>::zeros(n, n);
    for (i, &(mi, ni)) in idx.iter().enumerate() {
        for (j, &(mj, nj)) in idx.iter().enumerate().skip(i) {
            let v = spectrum.coefficient(mi - mj, ni - nj);
            // enforce exact Hermitian symmetry (real permittivity)
            let w = if i == j { Complex64::new(v.re, 0.0) } else { v };
            eps_hat.write(i, j, w.into());
            eps_hat.write(j, i, w.conj().into());
        }
    }
    let eta = invert_hermitian(&eps_hat)?;
    Ok(EpsFourier { eps_hat, eta })
}

pub(crate) fn invert_hermitian(m: &faer::Mat<faer::complex_native::c64>) -> Result<faer::Mat<faer::complex_native::c64>> {
    use faer::linalg::solvers::SolverCore;
    let inv = match m.cholesky(faer::Side::Lower) {
        Ok(ch) => ch.inverse(),
        Err(_) => m.partial_piv_lu().inverse(),
    };
    let n = inv.nrows();
    let mut out = inv;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = out.read(i, j);
            let b = out.read(j, i);
            let avg = faer::complex_native::c64::new(0.5 * (a.re + b.re), 0.5 * (a.im - b.im));
            out.write(i, j, avg);
            out.write(j, i, faer::complex_native::c64::new(avg.re, -avg.im));
        }
        let d = out.read(i, i);
        out.write(i, i, faer::complex_native::c64::new(d.re, 0.0));
    }
    if (0..n).any(|i| !out.read(i, i).re.is_finite()) {
        return Err(Error::Convergence("permittivity matrix is singular".into()));
    }
    Ok(out)
}

/// Structure configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureConfig {
    pub a_nm: f64,
    pub r_nm: f64,
    #[serde(rename = "L_nm")]
    pub l_nm: f64,
    pub t_nm: f64,
    pub n_slab: f64,
    pub rows: Vec<RowPerturbation>,
    pub n_rows: usize,
    pub w_vac_nm: f64,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_cap_nm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_ref_nm: Option<f64>,
    /// When true, positive dy moves holes toward the edge.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub dy_toward_edge: bool,
}

impl StructureConfig {
    pub fn to_params(&self) -> Result<StructureParams> {
        let row_spacing = self.a_nm * 3f64.sqrt() / 2.0;
        let p = StructureParams {
            a: self.a_nm,
            r: self.r_nm,
            l: self.l_nm,
            t: self.t_nm,
            n_slab: self.n_slab,
            rows: self.rows.clone(),
            n_rows: self.n_rows,
            w_vac: self.w_vac_nm,
            w_cap: self.w_cap_nm.unwrap_or(row_spacing),
            grid: self.grid,
            lambda_ref: self.lambda_ref_nm.unwrap_or(780.24),
            dy_sign: if self.dy_toward_edge { -1.0 } else { 1.0 },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_params(p: &StructureParams) -> Self {
        let row_spacing = p.row_spacing();
        StructureConfig {
            a_nm: p.a,
            r_nm: p.r,
            l_nm: p.l,
            t_nm: p.t,
            n_slab: p.n_slab,
            rows: p.rows.clone(),
            n_rows: p.n_rows,
            w_vac_nm: p.w_vac,
            grid: p.grid,
            w_cap_nm: ((p.w_cap - row_spacing).abs() > 1e-9).then_some(p.w_cap),
            lambda_ref_nm: ((p.lambda_ref - 780.24).abs() > 1e-9).then_some(p.lambda_ref),
            dy_toward_edge: p.dy_sign < 0.0,
        }
    }

    /// Parses a JSON document, reporting the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_center_and_radius_follow_perturbation() {
        let p = StructureParams::paper_optimized();
        let base = StructureParams::paper_unperturbed();
        let h = p.holes();
        let h0 = base.holes();
        assert!((h[0].y - h0[0].y - 42.7).abs() < 1e-12);
        assert!((h[0].r - 77.2).abs() < 1e-12);
        assert!((h[1].y - h0[1].y - 53.8).abs() < 1e-12);
        assert!((h[2].r - 52.2).abs() < 1e-12);
        assert_eq!(h[3], h0[3]);
    }

    #[test]
    fn rejects_perturbation_beyond_third_row() {
        let mut p = StructureParams::paper_unperturbed();
        p.rows.push(RowPerturbation { index: 4, dy: 1.0, dr: 0.0 });
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_overlapping_rows() {
        let mut p = StructureParams::paper_unperturbed();
        p.rows.push(RowPerturbation { index: 2, dy: -150.0, dr: 0.0 });
        assert!(matches!(p.validate(), Err(Error::Overlap(_))));
    }

    #[test]
    fn rejects_hole_crossing_edge() {
        let mut p = StructureParams::paper_unperturbed();
        p.rows.push(RowPerturbation { index: 1, dy: -400.0, dr: 0.0 });
        assert!(matches!(p.validate(), Err(Error::Overlap(_))));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let mut p = StructureParams::paper_unperturbed();
        p.grid.nx = 16;
        assert!(matches!(build_structure(&p), Err(Error::Resolution(_))));
    }

    #[test]
    fn no_holes_gives_uniform_strip() {
        let mut p = StructureParams::paper_unperturbed();
        p.r = 0.0;
        let map = build_structure(&p).unwrap();
        let e_max = map.n_eff * map.n_eff;
        for ix in 0..map.nx {
            for iy in 0..map.ny {
                let y = map.y_at(iy);
                let e = map.eps(ix, iy);
                if y < -map.dy() {
                    assert_eq!(e, 1.0);
                } else if y > map.dy() && y < p.y_top() - map.dy() {
                    assert!((e - e_max).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hole_area_fraction_matches_analytic() {
        let p = StructureParams::paper_unperturbed();
        let map = build_structure(&p).unwrap();
        // one period of the crystal region between two row mid-lines
        let s = p.row_spacing();
        let holes = p.holes();
        let (lo, hi) = (holes[4].y - s / 2.0, holes[4].y + s / 2.0);
        let (mut air, mut total) = (0.0, 0.0);
        for ix in 0..map.nx {
            for iy in 0..map.ny {
                let y = map.y_at(iy);
                if y > lo && y < hi {
                    air += 1.0 - map.fill(ix, iy);
                    total += 1.0;
                }
            }
        }
        let expected = PI * p.r * p.r / (p.a * s);
        // the band edges are sampled at grid resolution
        assert!(((air / total) - expected).abs() < 0.01, "{} vs {}", air / total, expected);
        assert!((expected - 0.3203).abs() < 1e-3);
    }

    #[test]
    fn map_is_deterministic_and_mirror_symmetric() {
        let p = StructureParams::paper_unperturbed();
        let a = build_structure(&p).unwrap();
        let b = build_structure(&p).unwrap();
        assert_eq!(a, b);
        for ix in 0..a.nx {
            for iy in 0..a.ny {
                assert!((a.eps(ix, iy) - a.eps(a.nx - 1 - ix, iy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_round_trip_and_missing_key() {
        let cfg = StructureConfig::from_params(&StructureParams::paper_optimized());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(StructureConfig::from_json(&text).unwrap(), cfg);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut().unwrap().remove("a_nm");
        let err = StructureConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("a_nm"), "{err}");
    }
}
