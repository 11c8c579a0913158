//! Group index, plateau detection and band-flattening optimization.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::C_NM;
use crate::error::{Error, Result};
use crate::lattice::StructureParams;
use crate::pwe::{h_fraction_below, k_window_grid, BandSet, KSolution, Solver};

/// Relative half-width of the flat-band criterion.
pub const PLATEAU_TOLERANCE: f64 = 0.15;

/// Cost returned for parameter vectors that break the geometry invariants.
pub const INVALID_PENALTY: f64 = 1e6;

/// Cost returned when no guided band qualifies as the slow band.
pub const NO_BAND_PENALTY: f64 = 1e4;

/// Minimum share of the k-window a band must cover to be a slow-band candidate.
pub const MIN_COVERAGE: f64 = 0.8;

// ---------------------------------------------------------------------------
// Group index and plateaus

/// A frequency interval where `n_g` stays within ±15% of its centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plateau {
    pub nu_min: f64,
    pub nu_max: f64,
    pub ng_center: f64,
    /// k-extent (units of π/a).
    pub k_lo: f64,
    pub k_hi: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispersionReport {
    /// `(ν [THz], n_g)` in k order.
    pub ng_of_freq: Vec<(f64, f64)>,
    pub plateau: Option<Plateau>,
    pub plateau_width_nm: f64,
    /// RMS of `dn_g/dν` (1/THz) over the sampled band.
    pub gvd_rms: f64,
}

/// `n_g = c/|v_g|`, with `v_g` in units of c.
pub fn group_index(vg_over_c: f64) -> f64 {
    1.0 / vg_over_c.abs()
}

/// Wavelength span (nm) of a frequency interval (THz).
pub fn width_nm(nu_min: f64, nu_max: f64) -> f64 {
    if nu_max <= nu_min {
        return 0.0;
    }
    C_NM / (nu_min * 1e12) - C_NM / (nu_max * 1e12)
}

/// Widest contiguous run (in wavelength) of at least three samples whose
/// group indices fit `|n_g − centre| ≤ 0.15·centre`, centre being the
/// midpoint of the run's extremes.
///
/// `center_range` optionally restricts the admissible centre values.
pub fn find_plateau(k_frac: &[f64], nu: &[f64], ng: &[f64], center_range: Option<(f64, f64)>) -> Option<Plateau> {
    let n = ng.len();
    let ratio = (1.0 + PLATEAU_TOLERANCE) / (1.0 - PLATEAU_TOLERANCE);
    let mut best: Option<(f64, Plateau)> = None;
    for i in 0..n {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for j in i..n {
            if !ng[j].is_finite() {
                break;
            }
            lo = lo.min(ng[j]);
            hi = hi.max(ng[j]);
            if hi > ratio * lo * (1.0 + 1e-12) {
                break;
            }
            if j - i + 1 < 3 {
                continue;
            }
            let center = 0.5 * (lo + hi);
            if let Some((cmin, cmax)) = center_range {
                if center < cmin || center > cmax {
                    continue;
                }
            }
            let (nmin, nmax) = nu[i..=j].iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            let w = width_nm(nmin, nmax);
            let better = match &best {
                None => true,
                Some((bw, _)) => w > *bw + 1e-12,
            };
            if better {
                best = Some((
                    w,
                    Plateau { nu_min: nmin, nu_max: nmax, ng_center: center, k_lo: k_frac[i], k_hi: k_frac[j], samples: j - i + 1 },
                ));
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Group-index curve and plateau of tracked band `band`.
pub fn group_index_curve(bands: &BandSet, band: usize) -> Result<DispersionReport> {
    report_from_samples(&band_k_fracs(bands), &bands.band(band), &bands.band_vg(band), None)
}

fn band_k_fracs(bands: &BandSet) -> Vec<f64> {
    (0..bands.k_samples.len()).map(|i| bands.k_fraction(i)).collect()
}

/// Report from raw samples; `center_range` as in [`find_plateau`].
pub fn report_from_samples(k_frac: &[f64], nu: &[f64], vg: &[f64], center_range: Option<(f64, f64)>) -> Result<DispersionReport> {
    if nu.len() < 3 {
        return Err(Error::NoPlateau);
    }
    let ng: Vec<f64> = vg.iter().map(|&v| group_index(v)).collect();
    let plateau = find_plateau(k_frac, nu, &ng, center_range).ok_or(Error::NoPlateau)?;
    let mut sq = 0.0;
    let mut cnt = 0usize;
    for i in 1..nu.len() {
        let dnu = nu[i] - nu[i - 1];
        if dnu.abs() > 1e-12 && ng[i].is_finite() && ng[i - 1].is_finite() {
            sq += ((ng[i] - ng[i - 1]) / dnu).powi(2);
            cnt += 1;
        }
    }
    Ok(DispersionReport {
        ng_of_freq: nu.iter().copied().zip(ng.iter().copied()).collect(),
        plateau_width_nm: width_nm(plateau.nu_min, plateau.nu_max),
        plateau: Some(plateau),
        gvd_rms: if cnt > 0 { (sq / cnt as f64).sqrt() } else { 0.0 },
    })
}

// ---------------------------------------------------------------------------
// Guided bands

/// A band segment of edge-guided modes, followed by modal overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedBand {
    /// k samples (rad/nm).
    pub k: Vec<f64>,
    pub freqs: Vec<f64>,
    pub vg: Vec<f64>,
    /// Sorted-order index of the mode at each sample.
    pub index: Vec<usize>,
    pub a: f64,
}

impl GuidedBand {
    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn k_fracs(&self) -> Vec<f64> {
        self.k.iter().map(|k| k * self.a / PI).collect()
    }

    pub fn group_indices(&self) -> Vec<f64> {
        self.vg.iter().map(|&v| group_index(v)).collect()
    }

    pub fn to_band_set(&self) -> BandSet {
        BandSet {
            k_samples: self.k.clone(),
            freqs: self.freqs.iter().map(|&f| vec![f]).collect(),
            vg: self.vg.iter().map(|&v| vec![v]).collect(),
            band_tracking: self.index.iter().map(|&i| vec![i]).collect(),
            a: self.a,
            warnings: Vec::new(),
        }
    }
}

/// Edge-localization boundary: modes with most of `|H|²` below the
/// third hole row are edge-guided.
pub fn edge_split(params: &StructureParams) -> f64 {
    params.l + params.r + 2.0 * params.row_spacing()
}

/// Minimum share of `|H|²` below [`edge_split`] for a guided mode.
pub const EDGE_FRACTION: f64 = 0.5;

/// Solves the k list and links edge-guided modes below the light line into
/// segments by overlap.
pub fn guided_bands(solver: &Solver, k_list: &[f64], nu_max: f64) -> Result<Vec<GuidedBand>> {
    let split = edge_split(&solver.params);
    let per_k: Vec<(KSolution, Vec<usize>)> = k_list
        .par_iter()
        .map(|&k| {
            let nu_ll = C_NM * k / (2.0 * PI) / 1e12;
            let cap = nu_ll.min(nu_max);
            let sol = solver.op.solve_k_below([k, 0.0], solver.op.len(), cap)?;
            let n_keep = sol.freqs.len();
            let guided: Vec<usize> = (0..n_keep)
                .filter(|&c| h_fraction_below(&solver.op, &solver.map, &sol, c, split) > EDGE_FRACTION)
                .collect();
            Ok((sol, guided))
        })
        .collect::<Result<Vec<_>>>()?;

    let a = solver.map.a;
    let mut bands: Vec<GuidedBand> = Vec::new();
    // open[j] = band index continuing guided mode j of the previous k
    let mut open: Vec<Option<usize>> = Vec::new();
    for (i, (sol, guided)) in per_k.iter().enumerate() {
        let mut next_open = vec![None; guided.len()];
        let mut claimed = vec![false; guided.len()];
        if i > 0 && !guided.is_empty() {
            let (prev_sol, prev_guided) = &per_k[i - 1];
            if !prev_guided.is_empty() {
                let take = |s: &KSolution, cols: &[usize]| {
                    faer::Mat::<faer::complex_native::c64>::from_fn(s.vectors.nrows(), cols.len(), |r, c| s.vectors.read(r, cols[c]))
                };
                let pm = take(prev_sol, prev_guided);
                let nm = take(sol, guided);
                let ov = pm.adjoint() * &nm;
                let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
                for p in 0..prev_guided.len() {
                    for q in 0..guided.len() {
                        let o = faer::ComplexField::faer_abs(ov.read(p, q));
                        if o >= crate::pwe::TRACKING_THRESHOLD {
                            pairs.push((o, p, q));
                        }
                    }
                }
                pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
                let mut used_prev = vec![false; prev_guided.len()];
                for (_, p, q) in pairs {
                    if used_prev[p] || claimed[q] {
                        continue;
                    }
                    if let Some(b) = open[p] {
                        used_prev[p] = true;
                        claimed[q] = true;
                        next_open[q] = Some(b);
                    }
                }
            }
        }
        for (q, &c) in guided.iter().enumerate() {
            let b = match next_open[q] {
                Some(b) => b,
                None => {
                    bands.push(GuidedBand { k: vec![], freqs: vec![], vg: vec![], index: vec![], a });
                    bands.len() - 1
                }
            };
            next_open[q] = Some(b);
            bands[b].k.push(sol.k[0]);
            bands[b].freqs.push(sol.freqs[c]);
            bands[b].vg.push(sol.vg[c]);
            bands[b].index.push(c);
        }
        open = next_open;
    }
    Ok(bands)
}

/// Projected band gaps of the bulk hole crystal at one `k_x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BulkGaps {
    pub k_over_pi_a: f64,
    /// Light-line frequency (THz).
    pub light_line_thz: f64,
    /// Open intervals `(lower, upper)` in THz, ascending.
    pub gaps: Vec<(f64, f64)>,
}

impl BulkGaps {
    pub fn contains(&self, nu: f64) -> bool {
        self.gaps.iter().any(|&(lo, hi)| nu > lo && nu < hi)
    }
}

/// Bulk triangular lattice on a rectangular `a × a√3` cell; the `k_y` axis is
/// sampled over half the cell's Brillouin zone and the bands are projected.
pub fn bulk_gaps(params: &StructureParams, order: f64, k_fracs: &[f64], n_ky: usize, n_bands: usize) -> Result<Vec<BulkGaps>> {
    params.validate()?;
    let a = params.a;
    let wy = a * 3f64.sqrt();
    let n_eff = crate::pwe::slab_effective_index(params.n_slab, params.t, params.lambda_ref).n_eff;
    let (nx, ny) = (48usize, (48.0 * 3f64.sqrt()).round() as usize);
    let (dx, dy) = (a / nx as f64, wy / ny as f64);
    let centers = [(0.0, wy / 4.0), (a / 2.0, 3.0 * wy / 4.0)];
    let r = params.r;
    let inside = |x: f64, y: f64| {
        centers.iter().any(|&(cx, cy)| {
            let ddx = (x - cx) - a * ((x - cx) / a).round();
            let ddy = (y - cy) - wy * ((y - cy) / wy).round();
            ddx * ddx + ddy * ddy < r * r
        })
    };
    const SUB: usize = 4;
    let map = crate::lattice::DielectricMap::from_fn(n_eff, a, wy, nx, ny, 0.0, |x, y| {
        let mut solid = 0;
        for i in 0..SUB {
            for j in 0..SUB {
                let xs = x + dx * ((i as f64 + 0.5) / SUB as f64 - 0.5);
                let ys = y + dy * ((j as f64 + 0.5) / SUB as f64 - 0.5);
                solid += usize::from(!inside(xs, ys));
            }
        }
        solid as f64 / (SUB * SUB) as f64
    });
    let op = crate::pwe::PlaneWaveOperator::from_map(&map, crate::pwe::ReciprocalBasis::with_order(a, wy, order))?;
    let n_ky = n_ky.max(2);
    k_fracs
        .par_iter()
        .map(|&s| {
            let kx = crate::pwe::k_from_fraction(s, a);
            let mut lo = vec![f64::INFINITY; n_bands];
            let mut hi = vec![f64::NEG_INFINITY; n_bands];
            for j in 0..n_ky {
                let ky = PI / wy * j as f64 / (n_ky - 1) as f64;
                let sol = op.solve_k([kx, ky], n_bands)?;
                for (b, &f) in sol.freqs.iter().enumerate() {
                    lo[b] = lo[b].min(f);
                    hi[b] = hi[b].max(f);
                }
            }
            let mut gaps = Vec::new();
            let mut top = hi[0];
            for b in 1..n_bands {
                // slivers under 1% are band crossings missed by the k_y sampling
                if lo[b] - top > 0.01 * 0.5 * (lo[b] + top) {
                    gaps.push((top, lo[b]));
                }
                top = top.max(hi[b]);
            }
            Ok(BulkGaps { k_over_pi_a: s, light_line_thz: C_NM * kx / (2.0 * PI) / 1e12, gaps })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Cost

/// Plane-wave and supercell settings used for dispersion evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// Plane-wave cutoff in reciprocal x-periods.
    pub order: f64,
    pub n_rows: usize,
    pub w_vac_nm: f64,
    pub points_per_period: usize,
}

impl SolverSettings {
    /// Reference settings (bands, reports, acceptance).
    pub fn reference() -> Self {
        SolverSettings { order: 4.0, n_rows: 10, w_vac_nm: 1200.0, points_per_period: 32 }
    }

    /// Reduced supercell for the optimizer inner loop.
    pub fn fast() -> Self {
        SolverSettings { order: 3.0, n_rows: 7, w_vac_nm: 800.0, points_per_period: 32 }
    }

    pub fn apply(&self, params: &StructureParams) -> StructureParams {
        let mut p = params.clone();
        p.n_rows = self.n_rows;
        p.w_vac = self.w_vac_nm;
        p.grid.nx = self.points_per_period;
        p.grid.ny = p.default_ny(self.points_per_period);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizationSpec {
    pub target_ng: f64,
    /// `[k_lo, k_hi]` in units of π/a.
    pub k_window: [f64; 2],
    /// `(w_ng, w_gvd)`.
    pub weights: [f64; 2],
    /// Box per parameter `(dy1, dr1, dy2, dr2, dy3, dr3)` in nm.
    pub bounds: [[f64; 2]; 6],
    /// Cost-evaluation budget across all restarts and the polish.
    pub max_iters: usize,
    /// Simplex cost-spread convergence threshold.
    pub tol: f64,
    pub n_k: usize,
    /// Random box samples evaluated before the local searches.
    pub screen: usize,
    /// Local searches, started from the best screened points.
    pub restarts: usize,
    pub seed: u64,
    pub settings: SolverSettings,
    /// Coordinate-polish step (nm).
    pub polish_step: f64,
}

impl Default for OptimizationSpec {
    fn default() -> Self {
        OptimizationSpec {
            target_ng: 30.0,
            k_window: [0.7, 0.9],
            weights: [1.0, 1e-4],
            bounds: [[-60.0, 60.0], [-25.0, 25.0], [-60.0, 60.0], [-25.0, 25.0], [-60.0, 60.0], [-25.0, 25.0]],
            max_iters: 600,
            tol: 1e-4,
            n_k: 11,
            screen: 96,
            restarts: 3,
            seed: 1,
            settings: SolverSettings::fast(),
            polish_step: 0.25,
        }
    }
}

impl OptimizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(5.0..=60.0).contains(&self.target_ng) {
            return Err(Error::Config(format!("target_ng = {} outside [5, 60]", self.target_ng)));
        }
        let [lo, hi] = self.k_window;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Config(format!("k_window {lo}..{hi} must satisfy 0 ≤ lo < hi ≤ 1")));
        }
        if self.n_k < 8 {
            return Err(Error::Config("n_k must be at least 8".into()));
        }
        if self.bounds.iter().any(|b| !(b[0] <= b[1])) {
            return Err(Error::Config("every bound needs lo ≤ hi".into()));
        }
        if self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn k_list(&self, a: f64) -> Vec<f64> {
        k_window_grid(a, self.k_window[0], self.k_window[1], self.n_k)
    }
}

/// Cost terms of one band sampled on a uniform k grid.
///
/// `w_ng·mean((n_g − t)²)/t² + w_gvd·mean((dn_g/dk · a)²)`.
pub fn band_cost(k: &[f64], vg: &[f64], a: f64, target: f64, weights: [f64; 2]) -> f64 {
    let ng: Vec<f64> = vg.iter().map(|&v| group_index(v)).collect();
    let n = ng.len();
    let first = ng.iter().map(|g| (g - target).powi(2)).sum::<f64>() / n as f64 / (target * target);
    let slope: f64 = if n < 2 {
        0.0
    } else {
        (0..n)
            .map(|i| {
                let (lo, hi) = if i == 0 { (0, 1) } else if i == n - 1 { (n - 2, n - 1) } else { (i - 1, i + 1) };
                ((ng[hi] - ng[lo]) / ((k[hi] - k[lo]) * a)).powi(2)
            })
            .sum::<f64>()
            / n as f64
    };
    weights[0] * first + weights[1] * slope
}

/// The slow band: among guided segments covering the window `[lo, hi]`
/// (fractions of π/a, `n_window` grid samples), the one whose mean group
/// index inside the window is closest to the target.
pub fn select_slow_band<'a>(bands: &'a [GuidedBand], window: [f64; 2], n_window: usize, target: f64) -> Option<&'a GuidedBand> {
    let need = ((MIN_COVERAGE * n_window as f64).ceil() as usize).max(3);
    let inside = |s: f64| s >= window[0] - 1e-9 && s <= window[1] + 1e-9;
    bands
        .iter()
        .filter_map(|b| {
            let ng: Vec<f64> = b.k_fracs().into_iter().zip(b.group_indices()).filter(|(s, _)| inside(*s)).map(|(_, g)| g.min(10.0 * target)).collect();
            if ng.len() < need {
                return None;
            }
            let mean = ng.iter().sum::<f64>() / ng.len() as f64;
            Some(((mean - target).abs(), b))
        })
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, b)| b)
}

/// Upper frequency considered for guided bands (THz); everything below the
/// light line qualifies.
const NU_CAP: f64 = f64::INFINITY;

/// Cost of a structure; invalid geometry maps to [`INVALID_PENALTY`].
pub fn cost(params: &StructureParams, spec: &OptimizationSpec) -> Result<f64> {
    let p = spec.settings.apply(params);
    if p.validate().is_err() {
        return Ok(INVALID_PENALTY);
    }
    let solver = match Solver::new(&p, spec.settings.order) {
        Ok(s) => s,
        Err(Error::Overlap(_)) | Err(Error::Resolution(_)) => return Ok(INVALID_PENALTY),
        Err(e) => return Err(e),
    };
    let k_list = spec.k_list(p.a);
    let bands = guided_bands(&solver, &k_list, NU_CAP)?;
    Ok(match select_slow_band(&bands, spec.k_window, k_list.len(), spec.target_ng) {
        Some(b) => band_cost(&b.k, &b.vg, p.a, spec.target_ng, spec.weights),
        None => NO_BAND_PENALTY,
    })
}

/// Dense-sampled dispersion report of the slow band.
///
/// The band is picked inside `select` (fractions of π/a) and reported over
/// `k_range`. The plateau centre is restricted to `target·(1 ± center_tol)`
/// when a tolerance is given.
pub fn slow_band_report(
    params: &StructureParams,
    settings: &SolverSettings,
    target: f64,
    k_range: [f64; 2],
    n_k: usize,
    select: [f64; 2],
    center_tol: Option<f64>,
) -> Result<(GuidedBand, DispersionReport)> {
    let p = settings.apply(params);
    let solver = Solver::new(&p, settings.order)?;
    let k_list = k_window_grid(p.a, k_range[0], k_range[1], n_k);
    let bands = guided_bands(&solver, &k_list, NU_CAP)?;
    let n_select = k_list.iter().map(|k| k * p.a / PI).filter(|s| *s >= select[0] - 1e-9 && *s <= select[1] + 1e-9).count();
    let band = select_slow_band(&bands, select, n_select, target).ok_or(Error::NoPlateau)?.clone();
    let range = center_tol.map(|t| (target * (1.0 - t), target * (1.0 + t)));
    let report = report_from_samples(&band.k_fracs(), &band.freqs, &band.vg, range)?;
    Ok((band, report))
}

// ---------------------------------------------------------------------------
// Optimizer

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    /// Best-so-far cost after this evaluation.
    pub cost: f64,
    /// Best-so-far parameter vector.
    pub params: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best: [f64; 6],
    pub best_cost: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

/// Memoizing, budgeted objective wrapper recording the best-so-far trace.
struct Objective<'f, F: Fn(&[f64; 6]) -> f64> {
    f: &'f F,
    cache: HashMap<[u64; 6], f64>,
    budget: usize,
    evals: usize,
    best: Option<([f64; 6], f64)>,
    trace: Vec<TraceEntry>,
}

impl<'f, F: Fn(&[f64; 6]) -> f64> Objective<'f, F> {
    fn exhausted(&self) -> bool {
        self.evals >= self.budget
    }

    fn eval(&mut self, x: &[f64; 6]) -> f64 {
        let key = x.map(f64::to_bits);
        if let Some(&c) = self.cache.get(&key) {
            return c;
        }
        if self.exhausted() {
            return f64::INFINITY;
        }
        let c = (self.f)(x);
        self.evals += 1;
        self.cache.insert(key, c);
        let norm = |v: &[f64; 6]| v.iter().map(|a| a * a).sum::<f64>();
        let better = match &self.best {
            None => true,
            Some((bx, bc)) => c < *bc || (c == *bc && norm(x) < norm(bx)),
        };
        if better {
            self.best = Some((*x, c));
        }
        let (bx, bc) = self.best.unwrap();
        self.trace.push(TraceEntry { iter: self.evals, cost: bc, params: bx });
        c
    }
}

fn clamp_to(x: &mut [f64; 6], bounds: &[[f64; 2]; 6]) {
    for (v, b) in x.iter_mut().zip(bounds) {
        *v = v.clamp(b[0], b[1]);
    }
}

/// Nelder–Mead with box clamping. Returns `true` on convergence.
fn nelder_mead<F: Fn(&[f64; 6]) -> f64>(obj: &mut Objective<F>, x0: [f64; 6], bounds: &[[f64; 2]; 6], tol: f64) -> bool {
    let n = 6;
    let mut simplex: Vec<[f64; 6]> = vec![x0];
    for i in 0..n {
        let width = bounds[i][1] - bounds[i][0];
        let mut x = x0;
        let step = 0.15 * width;
        x[i] = if x0[i] + step <= bounds[i][1] { x0[i] + step } else { x0[i] - step };
        clamp_to(&mut x, bounds);
        simplex.push(x);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|x| obj.eval(x)).collect();
    loop {
        if obj.exhausted() {
            return false;
        }
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        simplex = order.iter().map(|&i| simplex[i]).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = (vals[n] - vals[0]).abs();
        let size = simplex[1..].iter().map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
        if spread <= tol * (vals[0].abs() + tol) || size < 1e-3 {
            return true;
        }
        let mut centroid = [0.0; 6];
        for x in &simplex[..n] {
            for d in 0..n {
                centroid[d] += x[d] / n as f64;
            }
        }
        let along = |t: f64| {
            let mut p = [0.0; 6];
            for d in 0..n {
                p[d] = centroid[d] + t * (simplex[n][d] - centroid[d]);
            }
            clamp_to(&mut p, bounds);
            p
        };
        let xr = along(-1.0);
        let fr = obj.eval(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = obj.eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let x = along(-0.5);
                let f = obj.eval(&x);
                (x, f)
            } else {
                let x = along(0.5);
                let f = obj.eval(&x);
                (x, f)
            };
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    for d in 0..n {
                        simplex[i][d] = simplex[0][d] + 0.5 * (simplex[i][d] - simplex[0][d]);
                    }
                    vals[i] = obj.eval(&simplex[i]);
                }
            }
        }
    }
}

/// Coordinate polish with a fixed step; returns `true` if it reached a
/// point no single step improves.
fn polish<F: Fn(&[f64; 6]) -> f64>(obj: &mut Objective<F>, bounds: &[[f64; 2]; 6], step: f64) -> bool {
    loop {
        let Some((x, c)) = obj.best else { return false };
        let mut improved = false;
        for d in 0..6 {
            for s in [step, -step] {
                let mut y = x;
                y[d] += s;
                if y[d] < bounds[d][0] || y[d] > bounds[d][1] {
                    continue;
                }
                if obj.exhausted() {
                    return false;
                }
                if obj.eval(&y) < c {
                    improved = true;
                    break;
                }
            }
            if improved {
                break;
            }
        }
        if !improved {
            return true;
        }
    }
}

/// Bounded minimization of a 6-parameter objective: seeded random screening
/// of the box, Nelder–Mead from `x0` and the best screened points, then a
/// coordinate polish.
pub fn minimize<F: Fn(&[f64; 6]) -> f64 + Sync>(f: &F, x0: [f64; 6], spec: &OptimizationSpec) -> OptimizationResult {
    let bounds = &spec.bounds;
    let mut obj = Objective { f, cache: HashMap::new(), budget: spec.max_iters.max(1), evals: 0, best: None, trace: Vec::new() };
    let mut start = x0;
    clamp_to(&mut start, bounds);
    let collapsed = bounds.iter().all(|b| b[1] - b[0] <= 0.0);
    if collapsed {
        obj.eval(&start);
        let (best, best_cost) = obj.best.unwrap();
        return OptimizationResult { best, best_cost, evaluations: obj.evals, converged: true, trace: obj.trace };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut screened = vec![(obj.eval(&start), start)];
    for _ in 0..spec.screen {
        if obj.exhausted() {
            break;
        }
        let mut x = [0.0; 6];
        for d in 0..6 {
            x[d] = if bounds[d][1] > bounds[d][0] { rng.gen_range(bounds[d][0]..=bounds[d][1]) } else { bounds[d][0] };
        }
        screened.push((obj.eval(&x), x));
    }
    // stable sort keeps the start ahead of equal-cost samples
    screened.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut converged = true;
    for &(_, x) in screened.iter().take(spec.restarts.max(1)) {
        if obj.exhausted() {
            converged = false;
            break;
        }
        converged &= nelder_mead(&mut obj, x, bounds, spec.tol);
    }
    // continue from the best point found so far
    if !obj.exhausted() {
        let (bx, _) = obj.best.unwrap();
        converged &= nelder_mead(&mut obj, bx, bounds, spec.tol);
    }
    if spec.polish_step > 0.0 {
        converged &= polish(&mut obj, bounds, spec.polish_step);
    }
    let (best, best_cost) = obj.best.unwrap();
    OptimizationResult { best, best_cost, evaluations: obj.evals, converged, trace: obj.trace }
}

/// Optimizes the row perturbations of `params0`.
///
/// Returns the best structure, its slow-band report at reference settings
/// (when a plateau exists) and the optimizer record.
pub fn optimize(params0: &StructureParams, spec: &OptimizationSpec) -> Result<(StructureParams, Option<DispersionReport>, OptimizationResult)> {
    spec.validate()?;
    params0.validate()?;
    let f = |x: &[f64; 6]| cost(&params0.with_perturbation_vector(x), spec).unwrap_or(INVALID_PENALTY);
    let result = minimize(&f, params0.perturbation_vector(), spec);
    let best = if result.best == params0.perturbation_vector() { params0.clone() } else { params0.with_perturbation_vector(&result.best) };
    let report = slow_band_report(&best, &SolverSettings::reference(), spec.target_ng, [0.5, 1.0], 41, spec.k_window, Some(0.2)).ok().map(|(_, r)| r);
    Ok((best, report, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(vgs: impl Fn(f64) -> f64, nus: impl Fn(f64) -> f64, n: usize) -> BandSet {
        let a = 200.0;
        let ks: Vec<f64> = (0..n).map(|i| PI / a * (0.5 + 0.5 * i as f64 / (n - 1) as f64)).collect();
        BandSet {
            freqs: ks.iter().map(|&k| vec![nus(k)]).collect(),
            vg: ks.iter().map(|&k| vec![vgs(k)]).collect(),
            band_tracking: vec![vec![0]; n],
            k_samples: ks,
            a,
            warnings: vec![],
        }
    }

    #[test]
    fn linear_band_has_full_plateau() {
        let v = 0.05;
        let b = synthetic(|_| v, |k| v * C_NM * k / (2.0 * PI) / 1e12, 20);
        let r = group_index_curve(&b, 0).unwrap();
        let p = r.plateau.unwrap();
        assert_eq!(p.samples, 20);
        assert!((p.ng_center - 20.0).abs() < 1e-9);
        assert!(r.gvd_rms < 1e-9);
    }

    #[test]
    fn quadratic_edge_excludes_zone_edge() {
        let a = 200.0;
        let kedge = PI / a;
        let amp = 0.3 * a / PI; // vg(k) = 2A|k − π/a|, in units of c
        let b = synthetic(|k| 2.0 * amp * (k - kedge).abs(), |k| 380.0 - amp * (k - kedge).powi(2) * C_NM / (2.0 * PI) / 1e12, 25);
        let r = group_index_curve(&b, 0).unwrap();
        let p = r.plateau.unwrap();
        assert!(p.k_hi < 1.0);
    }

    #[test]
    fn no_plateau_error() {
        let k = [0.5, 0.6, 0.7];
        let nu = [300.0, 301.0, 302.0];
        let vg = [0.1, 0.02, 0.005];
        assert!(matches!(report_from_samples(&k, &nu, &vg, None), Err(Error::NoPlateau)));
    }

    #[test]
    fn cost_terms_are_linear_in_weights() {
        let a = 200.0;
        let k: Vec<f64> = (0..10).map(|i| (0.6 + 0.035 * i as f64) * PI / a).collect();
        let vg: Vec<f64> = (0..10).map(|i| 1.0 / (25.0 + i as f64)).collect();
        let c1 = band_cost(&k, &vg, a, 30.0, [1.0, 0.0]);
        let c2 = band_cost(&k, &vg, a, 30.0, [2.0, 0.0]);
        assert!((c2 - 2.0 * c1).abs() < 1e-14);
        let flat = vec![1.0 / 30.0; 10];
        assert_eq!(band_cost(&k, &flat, a, 30.0, [1.0, 4.0]), 0.0);
    }

    #[test]
    fn minimize_finds_planted_quadratic() {
        let x_star = [3.0, -2.0, 10.0, 1.5, -7.0, 4.0];
        let f = |x: &[f64; 6]| x.iter().zip(&x_star).enumerate().map(|(i, (a, b))| (1.0 + i as f64) * (a - b).powi(2)).sum::<f64>();
        let spec = OptimizationSpec { max_iters: 4000, tol: 1e-12, polish_step: 0.0, ..Default::default() };
        let r = minimize(&f, [0.0; 6], &spec);
        for (a, b) in r.best.iter().zip(&x_star) {
            assert!((a - b).abs() < 1e-3, "{:?}", r.best);
        }
        for w in r.trace.windows(2) {
            assert!(w[1].cost <= w[0].cost);
        }
    }

    #[test]
    fn collapsed_bounds_single_evaluation() {
        let f = |x: &[f64; 6]| x.iter().map(|v| v * v).sum::<f64>();
        let spec = OptimizationSpec { bounds: [[1.0, 1.0]; 6], ..Default::default() };
        let r = minimize(&f, [1.0; 6], &spec);
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.best, [1.0; 6]);
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let f = |x: &[f64; 6]| x.iter().map(|v| v * v).sum::<f64>();
        let spec = OptimizationSpec { max_iters: 1, ..Default::default() };
        let r = minimize(&f, [5.0; 6], &spec);
        assert_eq!(r.evaluations, 1);
        assert!(!r.converged);
    }

    #[test]
    fn plateau_is_scale_invariant() {
        let k: Vec<f64> = (0..30).map(|i| 0.5 + i as f64 / 58.0).collect();
        let nu: Vec<f64> = (0..30).map(|i| 350.0 + i as f64 * 0.2).collect();
        let ng: Vec<f64> = (0..30).map(|i| 20.0 + 8.0 * ((i as f64) * 0.3).sin()).collect();
        let p1 = find_plateau(&k, &nu, &ng, None).unwrap();
        let scaled: Vec<f64> = ng.iter().map(|g| g * 3.7).collect();
        let p2 = find_plateau(&k, &nu, &scaled, None).unwrap();
        assert_eq!((p1.k_lo, p1.k_hi), (p2.k_lo, p2.k_hi));
    }
}
