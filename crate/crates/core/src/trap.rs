//! Two-color evanescent dipole traps beside the waveguide edge.
//!
//! Coordinates follow the dielectric map: the slab occupies `y ≥ 0`,
//! `|z| ≤ t/2`, and atoms sit at `y < 0`. Distances `d` are measured from
//! the edge into the vacuum (`d = −y`).

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atoms::{polarizability, Frequency, TransitionTable};
use crate::casimir::CasimirCoefficient;
use crate::constants::{nm_to_omega, C_NM, EPS0, H, RB87_MASS};
use crate::coupling::ellipticity_vector;
use crate::dispersion::{edge_split, EDGE_FRACTION};
use crate::error::{Error, Result};
use crate::pwe::{h_fraction_below, k_from_fraction, Field3D, Solver};

/// Beams further apart than this (GHz) add as intensities.
pub const COHERENCE_GHZ: f64 = 1.0;
/// CP distances are clamped here (nm).
pub const CP_CLAMP_NM: f64 = 10.0;
/// Barrier separating a z double well (mK).
pub const DOUBLE_WELL_BARRIER_MK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "+x")]
    Forward,
    #[serde(rename = "-x")]
    Backward,
}

/// Which guided mode carries a beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeRef {
    /// Bloch wavevector as a fraction of π/a. When absent the k is chosen
    /// where the band through `near_THz` reaches the beam frequency.
    #[serde(default)]
    pub k_frac: Option<f64>,
    /// Picks the guided band closest to this frequency.
    #[serde(rename = "near_THz")]
    pub near_thz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSpec {
    pub mode: ModeRef,
    pub wavelength_nm: f64,
    #[serde(rename = "power_mW")]
    pub power_mw: f64,
    pub direction: Direction,
    /// Frequency offset of this beam (GHz).
    #[serde(default, rename = "detuning_GHz")]
    pub detuning_ghz: f64,
}

impl BeamSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.power_mw >= 0.0) {
            return Err(Error::Config(format!("power_mW = {} must be non-negative", self.power_mw)));
        }
        if !(self.wavelength_nm > 0.0) {
            return Err(Error::Config(format!("wavelength_nm = {} must be positive", self.wavelength_nm)));
        }
        if let Some(k) = self.mode.k_frac {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::Config(format!("k_frac = {k} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// Angular frequency including the detuning.
    pub fn omega(&self) -> f64 {
        nm_to_omega(self.wavelength_nm) + 2.0 * std::f64::consts::PI * self.detuning_ghz * 1e9
    }
}

/// Search region for the trap minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBox {
    pub d_min_nm: f64,
    pub d_max_nm: f64,
    pub z_max_nm: f64,
    /// Grid steps of the coarse search (nm).
    pub step_nm: [f64; 3],
}

impl Default for SearchBox {
    fn default() -> Self {
        SearchBox { d_min_nm: 30.0, d_max_nm: 300.0, z_max_nm: 300.0, step_nm: [0.0, 3.0, 10.0] }
    }
}

// ---------------------------------------------------------------------------
// Fields

/// Scales a unit-normalized mode to carry `power_mw`.
///
/// The cell-averaged electric energy `∫ε₀ε|E|²/4 dV` equals half of `P a/v_g`.
pub fn physical_field(mode: &Field3D, power_mw: f64, direction: Direction) -> Result<Field3D> {
    if !(mode.vg() > crate::coupling::MIN_VG) {
        return Err(Error::ZeroVg(format!("v_g = {:e} c", mode.vg())));
    }
    if !(power_mw >= 0.0) {
        return Err(Error::Domain(format!("power {power_mw} mW")));
    }
    let p = power_mw * 1e-3;
    let a = mode.a() * 1e-9;
    let vg = mode.vg() * crate::constants::C;
    let mut f = mode.clone();
    f.scale *= (2.0 * p * a / (vg * EPS0)).sqrt();
    if direction == Direction::Backward {
        f = f.reversed();
    }
    Ok(f)
}

/// Edge-guided mode at `k_frac` closest to `near_thz`.
pub fn guided_mode(solver: &Solver, k_frac: f64, near_thz: f64) -> Result<Field3D> {
    let k = k_from_fraction(k_frac, solver.map.a);
    let nu_ll = C_NM * k / (2.0 * std::f64::consts::PI) / 1e12;
    let sol = solver.op.solve_k_below([k, 0.0], solver.op.len(), nu_ll)?;
    let split = edge_split(&solver.params);
    let col = (0..sol.freqs.len())
        .filter(|&c| h_fraction_below(&solver.op, &solver.map, &sol, c, split) > EDGE_FRACTION)
        .min_by(|&x, &y| (sol.freqs[x] - near_thz).abs().total_cmp(&(sol.freqs[y] - near_thz).abs()))
        .ok_or_else(|| Error::Config(format!("no guided mode at k = {k_frac} π/a")))?;
    Ok(solver.extend(&solver.mode_from(&sol, col)))
}

/// Guided mode on the band through `near_thz` whose frequency equals `nu_thz`,
/// located by secant iteration on k within `[k_lo, k_hi]` (fractions of π/a).
///
/// With several crossings the one at the largest k (furthest from the light
/// line) is taken.
pub fn guided_mode_at_frequency(solver: &Solver, near_thz: f64, nu_thz: f64, k_lo: f64, k_hi: f64) -> Result<Field3D> {
    let freq_at = |s: f64| -> Result<f64> { Ok(guided_mode(solver, s, near_thz)?.freq()) };
    let n = 11;
    let ks: Vec<f64> = (0..n).map(|i| k_lo + (k_hi - k_lo) * i as f64 / (n - 1) as f64).collect();
    let fs: Vec<f64> = ks.par_iter().map(|&s| freq_at(s)).collect::<Result<_>>()?;
    let bracket = (0..n - 1).rev().find(|&i| (fs[i] - nu_thz) * (fs[i + 1] - nu_thz) <= 0.0);
    let i = bracket.ok_or_else(|| Error::Config(format!("band near {near_thz} THz does not reach {nu_thz:.3} THz")))?;
    let (mut a, mut fa, mut b, mut fb) = (ks[i], fs[i] - nu_thz, ks[i + 1], fs[i + 1] - nu_thz);
    for _ in 0..30 {
        if (b - a).abs() < 1e-7 || fa == fb {
            break;
        }
        let c = b - fb * (b - a) / (fb - fa);
        let c = c.clamp(a.min(b), a.max(b));
        let fc = freq_at(c)? - nu_thz;
        if fc.abs() < 1e-6 {
            a = c;
            fa = fc;
            b = c;
            break;
        }
        if fa * fc < 0.0 {
            b = c;
            fb = fc;
        } else {
            a = c;
            fa = fc;
        }
    }
    let s = if fa.abs() < fb.abs() { a } else { b };
    guided_mode(solver, s, near_thz)
}

/// Resolves and power-scales every beam.
pub fn build_beams(solver: &Solver, specs: &[BeamSpec], k_range: (f64, f64)) -> Result<Vec<Beam>> {
    let mut cache: Vec<(ModeRef, f64, Field3D)> = Vec::new();
    let mut out = Vec::new();
    for s in specs {
        s.validate()?;
        let nu = crate::constants::nm_to_thz(s.wavelength_nm);
        let mode = match cache.iter().find(|c| c.0 == s.mode && (c.0.k_frac.is_some() || c.1 == nu)) {
            Some(c) => c.2.clone(),
            None => {
                let m = match s.mode.k_frac {
                    Some(k) => guided_mode(solver, k, s.mode.near_thz)?,
                    None => guided_mode_at_frequency(solver, s.mode.near_thz, nu, k_range.0, k_range.1)?,
                };
                cache.push((s.mode, nu, m.clone()));
                m
            }
        };
        out.push(Beam { field: physical_field(&mode, s.power_mw, s.direction)?, omega: s.omega(), spec: s.clone() });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Beam {
    /// Field in V/m.
    pub field: Field3D,
    /// Angular frequency seen by the atom (rad/s).
    pub omega: f64,
    pub spec: BeamSpec,
}

// ---------------------------------------------------------------------------
// Potential

/// Beams sharing a frequency (within [`COHERENCE_GHZ`]); their fields add.
#[derive(Debug, Clone)]
struct Group {
    fields: Vec<Field3D>,
    alpha_s: f64,
    /// Vector polarizability of the ground hyperfine level.
    alpha_v: f64,
}

impl Group {
    fn field(&self, r: [f64; 3]) -> [Complex64; 3] {
        let mut e = [Complex64::new(0.0, 0.0); 3];
        for f in &self.fields {
            let v = f.field_at(r[0], r[1], r[2]);
            for i in 0..3 {
                e[i] += v[i];
            }
        }
        e
    }
}

/// Separable potential contributions at one point (J); `vector` is the value
/// for the stretched state `mF = F`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Components {
    pub scalar_red: f64,
    pub scalar_blue: f64,
    pub vector: f64,
    pub cp: f64,
}

impl Components {
    pub fn total(&self, mf_over_f: f64) -> f64 {
        self.scalar_red + self.scalar_blue + mf_over_f * self.vector + self.cp
    }
}

/// Shortest distance (nm) from `(y, z)` to the half-slab `y ≥ 0, |z| ≤ t/2`.
pub fn surface_distance(y: f64, z: f64, t: f64) -> f64 {
    let dz = (z.abs() - t / 2.0).max(0.0);
    let dy = (-y).max(0.0);
    (dy * dy + dz * dz).sqrt()
}

/// `−C₃/d³` (J) with `d` clamped at [`CP_CLAMP_NM`]; the flag marks clamping.
pub fn casimir_polder_term(c3: &CasimirCoefficient, d_nm: f64) -> (f64, bool) {
    let clamped = d_nm < CP_CLAMP_NM;
    (crate::casimir::plane_potential(c3, d_nm.max(CP_CLAMP_NM)), clamped)
}

/// Light shifts of all beams plus the surface term for one hyperfine level.
#[derive(Debug, Clone)]
pub struct TrapModel {
    groups: Vec<Group>,
    pub c3: Option<CasimirCoefficient>,
    /// Slab thickness (nm).
    pub t: f64,
    pub a: f64,
    pub f: f64,
    pub axis_sign: f64,
}

impl TrapModel {
    pub fn new(beams: &[Beam], table: &TransitionTable, f: f64, c3: Option<CasimirCoefficient>, t: f64, axis_sign: f64) -> Result<Self> {
        let a = beams.first().map_or(0.0, |b| b.field.a());
        let mut groups: Vec<(f64, Group)> = Vec::new();
        let two_pi_ghz = 2.0 * std::f64::consts::PI * COHERENCE_GHZ * 1e9;
        for b in beams.iter().filter(|b| b.spec.power_mw > 0.0) {
            if let Some(g) = groups.iter_mut().find(|g| (g.0 - b.omega).abs() <= two_pi_ghz) {
                g.1.fields.push(b.field.clone());
                continue;
            }
            let p = polarizability(table, Frequency::Real(b.omega))?;
            let alpha_v = p.alpha_v_hyperfine(table.d2().j, table.hyperfine.nuclear_spin, f)?;
            groups.push((b.omega, Group { fields: vec![b.field.clone()], alpha_s: p.alpha_s, alpha_v }));
        }
        Ok(TrapModel { groups: groups.into_iter().map(|g| g.1).collect(), c3, t, a, f, axis_sign })
    }

    pub fn components(&self, r: [f64; 3]) -> Components {
        let mut c = Components::default();
        for g in &self.groups {
            let e = g.field(r);
            let i2: f64 = e.iter().map(|v| v.norm_sqr()).sum();
            let s = -g.alpha_s * i2 / 4.0;
            if g.alpha_s > 0.0 {
                c.scalar_red += s;
            } else {
                c.scalar_blue += s;
            }
            let cz = ellipticity_vector(e).map_or(0.0, |v| v[2] * self.axis_sign);
            c.vector += -i2 / 4.0 * cz * g.alpha_v / 2.0;
        }
        if let Some(c3) = &self.c3 {
            c.cp = casimir_polder_term(c3, surface_distance(r[1], r[2], self.t)).0;
        }
        c
    }

    /// Total potential (J) of `mF`.
    pub fn potential(&self, r: [f64; 3], mf: f64) -> f64 {
        let ratio = if self.f > 0.0 { mf / self.f } else { 0.0 };
        self.components(r).total(ratio)
    }

    /// Spread `max − min` over all `mF` (J).
    pub fn mf_spread(&self, r: [f64; 3]) -> f64 {
        2.0 * self.components(r).vector.abs()
    }

    /// Sum of the time-averaged intensities `|E|²` of the red and of the blue groups.
    pub fn intensities(&self, r: [f64; 3]) -> (f64, f64) {
        let (mut red, mut blue) = (0.0, 0.0);
        for g in &self.groups {
            let i2: f64 = g.field(r).iter().map(|v| v.norm_sqr()).sum();
            if g.alpha_s > 0.0 {
                red += i2;
            } else {
                blue += i2;
            }
        }
        (red, blue)
    }

    pub fn has_red_and_blue(&self) -> bool {
        self.groups.iter().any(|g| g.alpha_s > 0.0) && self.groups.iter().any(|g| g.alpha_s < 0.0)
    }
}

/// Potential components sampled on a rectilinear grid, in mK.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub scalar_red: Vec<f64>,
    pub scalar_blue: Vec<f64>,
    pub vector: Vec<f64>,
    pub cp: Vec<f64>,
    pub f: f64,
}

impl PotentialField {
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.y.len() + iy) * self.z.len() + iz
    }

    /// Total of `mF` at every node (mK).
    pub fn total(&self, mf: f64) -> Vec<f64> {
        let ratio = if self.f > 0.0 { mf / self.f } else { 0.0 };
        (0..self.cp.len()).map(|i| self.scalar_red[i] + self.scalar_blue[i] + ratio * self.vector[i] + self.cp[i]).collect()
    }
}

pub fn sample_potential(model: &TrapModel, x: &[f64], y: &[f64], z: &[f64]) -> PotentialField {
    let mk = |v: f64| crate::constants::joule_to_mk(v);
    let rows: Vec<Vec<Components>> = x
        .par_iter()
        .map(|&xv| {
            let mut out = Vec::with_capacity(y.len() * z.len());
            for &yv in y {
                for &zv in z {
                    out.push(model.components([xv, yv, zv]));
                }
            }
            out
        })
        .collect();
    let all: Vec<Components> = rows.into_iter().flatten().collect();
    PotentialField {
        x: x.to_vec(),
        y: y.to_vec(),
        z: z.to_vec(),
        scalar_red: all.iter().map(|c| mk(c.scalar_red)).collect(),
        scalar_blue: all.iter().map(|c| mk(c.scalar_blue)).collect(),
        vector: all.iter().map(|c| mk(c.vector)).collect(),
        cp: all.iter().map(|c| mk(c.cp)).collect(),
        f: model.f,
    }
}

// ---------------------------------------------------------------------------
// Analysis

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrapReport {
    /// Position of the minimum (nm).
    pub r_min_nm: [f64; 3],
    /// Distance of the minimum from the edge (nm).
    pub distance_nm: f64,
    pub depth_mk: f64,
    /// Escape barriers along ±x, toward/away from the edge, ±z (mK).
    pub barriers_mk: [f64; 6],
    /// Trap frequencies ω/2π (MHz).
    pub freqs_mhz: [f64; 3],
    pub double_well_z: bool,
    pub mf_spread_mk: f64,
    pub u_min_mk: f64,
}

/// Periodic-in-x scalar potential (J) for the analysis routines.
pub trait ScalarPotential: Sync {
    fn eval(&self, r: [f64; 3]) -> f64;
    fn period(&self) -> f64;
}

pub struct ModelPotential<'a> {
    pub model: &'a TrapModel,
    pub mf: f64,
}

impl ScalarPotential for ModelPotential<'_> {
    fn eval(&self, r: [f64; 3]) -> f64 {
        self.model.potential(r, self.mf)
    }
    fn period(&self) -> f64 {
        self.model.a
    }
}

/// Adapter for closures; `period` along x in nm.
pub struct FnPotential<F: Fn([f64; 3]) -> f64 + Sync> {
    pub f: F,
    pub period: f64,
}

impl<F: Fn([f64; 3]) -> f64 + Sync> ScalarPotential for FnPotential<F> {
    fn eval(&self, r: [f64; 3]) -> f64 {
        (self.f)(r)
    }
    fn period(&self) -> f64 {
        self.period
    }
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round().max(1.0) as usize;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Golden-section minimum of `f` on `[lo, hi]`.
fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Locates and characterizes the trap minimum.
///
/// A coarse grid over the search box is refined by cyclic line searches.
/// Minima on the near or far face of the box in `d` are rejected.
pub fn analyze_trap(u: &dyn ScalarPotential, mass: f64, search: &SearchBox, z_symmetric: bool) -> Result<TrapReport> {
    let a = u.period();
    let nx = if search.step_nm[0] > 0.0 { (a / search.step_nm[0]).round().max(4.0) as usize } else { 16 };
    let xs: Vec<f64> = (0..nx).map(|i| -a / 2.0 + a * i as f64 / nx as f64).collect();
    let ds = grid(search.d_min_nm, search.d_max_nm, search.step_nm[1]);
    let z_lo = if z_symmetric { 0.0 } else { -search.z_max_nm };
    let zs = grid(z_lo, search.z_max_nm, search.step_nm[2]);
    let vals: Vec<(f64, [f64; 3])> = xs
        .par_iter()
        .flat_map_iter(|&x| {
            let mut v = Vec::new();
            for &d in &ds {
                for &z in &zs {
                    let r = [x, -d, z];
                    v.push((u.eval(r), r));
                }
            }
            v
        })
        .collect();
    let (umin, mut r) = vals
        .iter()
        .filter(|v| v.0.is_finite())
        .fold((f64::INFINITY, [0.0; 3]), |acc, v| if v.0 < acc.0 { (v.0, v.1) } else { acc });
    if !umin.is_finite() {
        return Err(Error::NoMinimum("potential not finite in the search box".into()));
    }
    // cyclic refinement within one coarse cell
    let h = [a / nx as f64, search.step_nm[1], search.step_nm[2]];
    for _ in 0..6 {
        for axis in 0..3 {
            let lo = r[axis] - h[axis];
            let hi = r[axis] + h[axis];
            let (lo, hi) = match axis {
                1 => (lo.max(-search.d_max_nm), hi.min(-search.d_min_nm)),
                2 if z_symmetric => (lo.max(0.0), hi.min(search.z_max_nm)),
                2 => (lo.max(-search.z_max_nm), hi.min(search.z_max_nm)),
                _ => (lo, hi),
            };
            let best = golden(
                |s| {
                    let mut p = r;
                    p[axis] = s;
                    u.eval(p)
                },
                lo,
                hi,
                1e-3,
            );
            r[axis] = best;
        }
    }
    let d = -r[1];
    let tol = 0.05 * search.step_nm[1];
    if d <= search.d_min_nm + tol {
        return Err(Error::NoMinimum(format!("potential falls toward the surface (minimum at the {:.0} nm search boundary)", search.d_min_nm)));
    }
    if d >= search.d_max_nm - tol {
        return Err(Error::NoMinimum(format!("no confinement within {:.0} nm of the edge", search.d_max_nm)));
    }
    let u0 = u.eval(r);
    if z_symmetric && r[2].abs() < 0.5 {
        r[2] = 0.0;
    }

    // escape barriers along straight lines
    let line_max = |dir: [f64; 3], len: f64, n: usize| -> f64 {
        (1..=n)
            .map(|i| {
                let s = len * i as f64 / n as f64;
                u.eval([r[0] + dir[0] * s, r[1] + dir[1] * s, r[2] + dir[2] * s])
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let to_surface = (d - CP_CLAMP_NM).max(0.0);
    let far = 1000.0;
    let barriers_j = [
        line_max([1.0, 0.0, 0.0], a, 128),
        line_max([-1.0, 0.0, 0.0], a, 128),
        line_max([0.0, 1.0, 0.0], to_surface, 400),
        line_max([0.0, -1.0, 0.0], far, 500).max(0.0),
        line_max([0.0, 0.0, 1.0], far, 500).max(0.0),
        line_max([0.0, 0.0, -1.0], far, 500).max(0.0),
    ];
    let barriers_mk = barriers_j.map(|b| crate::constants::joule_to_mk(b - u0));
    let depth_mk = barriers_mk.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(depth_mk > 0.0) {
        return Err(Error::NoMinimum(format!("minimum at d = {d:.1} nm is not bound (depth {depth_mk:.3e} mK)")));
    }

    // curvatures from a five-point stencil
    let hs = 1.0;
    let curv = |axis: usize| -> f64 {
        let at = |s: f64| {
            let mut p = r;
            p[axis] += s;
            u.eval(p)
        };
        (-at(2.0 * hs) + 16.0 * at(hs) - 30.0 * u0 + 16.0 * at(-hs) - at(-2.0 * hs)) / (12.0 * hs * hs) * 1e18
    };
    let k = [curv(0), curv(1), curv(2)];
    let freqs_mhz = k.map(|c| if c > 0.0 { (c / mass).sqrt() / (2.0 * std::f64::consts::PI) / 1e6 } else { f64::NAN });

    // double well: symmetric z minima with a barrier at z = 0
    let double_well_z = if r[2].abs() > 1.0 {
        let barrier = u.eval([r[0], r[1], 0.0]) - u0;
        crate::constants::joule_to_mk(barrier) > DOUBLE_WELL_BARRIER_MK
    } else {
        false
    };

    Ok(TrapReport {
        r_min_nm: r,
        distance_nm: d,
        depth_mk,
        barriers_mk,
        freqs_mhz,
        double_well_z,
        mf_spread_mk: 0.0,
        u_min_mk: crate::constants::joule_to_mk(u0),
    })
}

// ---------------------------------------------------------------------------
// Configuration-level drivers

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomState {
    pub f: f64,
    pub mf: f64,
}

impl Default for AtomState {
    fn default() -> Self {
        AtomState { f: 2.0, mf: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapSettings {
    pub beams: Vec<BeamSpec>,
    pub atom: AtomState,
    pub include_cp: bool,
    /// Fixed C₃ in Hz·µm³; computed from the tables when absent.
    #[serde(rename = "c3_Hz_um3")]
    pub c3_hz_um3: Option<f64>,
    pub mass_kg: f64,
    pub search: SearchBox,
    /// Range of k (fractions of π/a) searched for beams given by frequency.
    pub k_range: [f64; 2],
    pub axis_sign: f64,
}

impl Default for TrapSettings {
    fn default() -> Self {
        TrapSettings {
            beams: paper_beams(1.65, 0.1),
            atom: AtomState::default(),
            include_cp: true,
            c3_hz_um3: None,
            mass_kg: RB87_MASS,
            search: SearchBox::default(),
            k_range: [0.55, 1.0],
            axis_sign: -1.0,
        }
    }
}

/// Counter-propagating red and blue pairs: blue at 737 nm on the upper
/// band, red at 784.5 nm on the fast part of the slow band; the second beam
/// of each pair is offset by 250 GHz (blue) and 280 GHz (red).
pub fn paper_beams(p_blue_mw: f64, p_red_mw: f64) -> Vec<BeamSpec> {
    let blue = ModeRef { k_frac: None, near_thz: 405.0 };
    let red = ModeRef { k_frac: Some(0.65), near_thz: 360.0 };
    let beam = |mode, wl, p, dir, det| BeamSpec { mode, wavelength_nm: wl, power_mw: p, direction: dir, detuning_ghz: det };
    vec![
        beam(blue, 737.0, p_blue_mw, Direction::Forward, 0.0),
        beam(blue, 737.0, p_blue_mw, Direction::Backward, 250.0),
        beam(red, 784.5, p_red_mw, Direction::Forward, 0.0),
        beam(red, 784.5, p_red_mw, Direction::Backward, 280.0),
    ]
}

impl TrapSettings {
    pub fn validate(&self) -> Result<()> {
        if self.beams.is_empty() {
            return Err(Error::Config("beams: at least one beam required".into()));
        }
        for (i, b) in self.beams.iter().enumerate() {
            b.validate().map_err(|e| Error::Config(format!("beams[{i}]: {e}")))?;
        }
        if self.atom.mf.abs() > self.atom.f || (self.atom.f - self.atom.mf).fract() != 0.0 {
            return Err(Error::Config(format!("atom: invalid level |{}, {}⟩", self.atom.f, self.atom.mf)));
        }
        let s = &self.search;
        if !(s.d_min_nm > CP_CLAMP_NM && s.d_max_nm > s.d_min_nm && s.z_max_nm > 0.0) || s.step_nm[1] <= 0.0 || s.step_nm[2] <= 0.0 {
            return Err(Error::Config("search: inconsistent box".into()));
        }
        if !(self.k_range[0] > 0.0 && self.k_range[1] <= 1.0 && self.k_range[0] < self.k_range[1]) {
            return Err(Error::Config(format!("k_range {:?} outside (0, 1]", self.k_range)));
        }
        if self.axis_sign.abs() != 1.0 {
            return Err(Error::Config("axis_sign must be ±1".into()));
        }
        if !(self.mass_kg > 0.0) {
            return Err(Error::Config("mass_kg must be positive".into()));
        }
        Ok(())
    }

    pub fn c3(&self, table: &TransitionTable, permittivity: &crate::casimir::PermittivityTable) -> Result<Option<CasimirCoefficient>> {
        if !self.include_cp {
            return Ok(None);
        }
        Ok(Some(match self.c3_hz_um3 {
            Some(v) => CasimirCoefficient::from_si(v * H * 1e-18, 0.0, 0),
            None => crate::casimir::compute_c3(permittivity, table)?,
        }))
    }

    pub fn with_directions_forward(&self) -> Self {
        let mut s = self.clone();
        for b in s.beams.iter_mut() {
            b.direction = Direction::Forward;
        }
        s
    }
}

/// Solved trap with its model.
pub struct TrapSolution {
    pub model: TrapModel,
    pub beams: Vec<Beam>,
    pub report: TrapReport,
}

/// Builds the model and analyzes the trap for the configured atom.
pub fn solve_trap(solver: &Solver, settings: &TrapSettings, table: &TransitionTable, c3: Option<CasimirCoefficient>) -> Result<TrapSolution> {
    let beams = build_beams(solver, &settings.beams, (settings.k_range[0], settings.k_range[1]))?;
    trap_from_beams(solver, beams, settings, table, c3)
}

pub fn trap_from_beams(solver: &Solver, beams: Vec<Beam>, settings: &TrapSettings, table: &TransitionTable, c3: Option<CasimirCoefficient>) -> Result<TrapSolution> {
    let model = TrapModel::new(&beams, table, settings.atom.f, c3, solver.params.t, settings.axis_sign)?;
    let u = ModelPotential { model: &model, mf: settings.atom.mf };
    // slab profile and CP term are even in z
    let mut report = analyze_trap(&u, settings.mass_kg, &settings.search, true)?;
    report.mf_spread_mk = crate::constants::joule_to_mk(model.mf_spread(report.r_min_nm));
    Ok(TrapSolution { model, beams, report })
}

/// Rescales every beam of a beam set by `gamma` in power.
pub fn scale_beams(beams: &[Beam], gamma: f64) -> Vec<Beam> {
    beams
        .iter()
        .map(|b| {
            let mut c = b.clone();
            c.field.scale *= gamma.sqrt();
            c.spec.power_mw *= gamma;
            c
        })
        .collect()
}

/// Per-colour power factors that place the minimum at a target distance
/// with a target depth.
pub struct PowerCalibration {
    pub gamma_blue: f64,
    pub gamma_red: f64,
    pub solution: TrapSolution,
    pub evaluations: usize,
}

/// Rescales red and blue beams independently starting from `beams`. The red
/// to blue ratio is bracketed on a log grid and bisected for the distance,
/// then the common factor is set from the depth; the two steps alternate
/// until the distance is within 0.5 nm and the depth within 0.1%.
pub fn calibrate_powers(
    solver: &Solver,
    beams: &[Beam],
    settings: &TrapSettings,
    table: &TransitionTable,
    c3: Option<CasimirCoefficient>,
    target_nm: f64,
    target_depth_mk: f64,
) -> Result<PowerCalibration> {
    if !(target_nm > settings.search.d_min_nm && target_nm < settings.search.d_max_nm && target_depth_mk > 0.0) {
        return Err(Error::Config("calibration target outside the search box".into()));
    }
    let red = beams
        .iter()
        .map(|b| Ok(polarizability(table, Frequency::Real(b.omega))?.alpha_s > 0.0))
        .collect::<Result<Vec<_>>>()?;
    if !red.iter().any(|&r| r) || red.iter().all(|&r| r) {
        return Err(Error::Config("calibration needs red and blue beams".into()));
    }
    let mut evaluations = 0;
    let mut eval = |gb: f64, gr: f64| -> Option<TrapSolution> {
        evaluations += 1;
        let scaled: Vec<Beam> = beams
            .iter()
            .zip(&red)
            .map(|(b, &r)| scale_beams(std::slice::from_ref(b), if r { gr } else { gb }).remove(0))
            .collect();
        trap_from_beams(solver, scaled, settings, table, c3).ok().filter(|s| !s.report.double_well_z)
    };
    let lost = || Error::NoMinimum("power calibration lost the trap".into());
    let (mut s, mut rho) = (1.0f64, 1.0f64);
    for _ in 0..24 {
        // distance falls as the red share grows
        let grid: Vec<f64> = (-16..=32).map(|i| 2f64.powf(i as f64 / 4.0)).collect();
        let d: Vec<Option<f64>> = grid.iter().map(|&g| eval(s, s * rho * g).map(|t| t.report.distance_nm)).collect();
        let Some(i) = (0..grid.len() - 1).find(|&i| matches!((d[i], d[i + 1]), (Some(a), Some(b)) if a >= target_nm && b <= target_nm)) else {
            // too weak against the surface attraction at every ratio
            s *= 2.0;
            if s > 1024.0 {
                return Err(lost());
            }
            continue;
        };
        let (mut lo, mut hi) = (rho * grid[i], rho * grid[i + 1]);
        while hi / lo - 1.0 > 1e-6 {
            let mid = (lo * hi).sqrt();
            let dm = eval(s, s * mid).ok_or_else(lost)?.report.distance_nm;
            if dm >= target_nm {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        rho = (lo * hi).sqrt();
        for _ in 0..20 {
            let sol = eval(s, s * rho).ok_or_else(lost)?;
            let ratio = target_depth_mk / sol.report.depth_mk;
            if (ratio - 1.0).abs() < 1e-3 {
                if (sol.report.distance_nm - target_nm).abs() < 0.5 {
                    return Ok(PowerCalibration { gamma_blue: s, gamma_red: s * rho, solution: sol, evaluations });
                }
                break;
            }
            s *= ratio;
        }
    }
    Err(Error::Convergence("power calibration did not settle".into()))
}

/// Zeeman broadening with and without counter-propagating pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZeemanReport {
    pub spread_single_mk: f64,
    pub spread_paired_mk: f64,
    pub reduction: f64,
    pub r_min_nm: [f64; 3],
}

/// Compares the mF spread at the paired trap's minimum with the spread of the
/// same beams all sent along +x.
pub fn zeeman_compensation(solver: &Solver, settings: &TrapSettings, table: &TransitionTable, c3: Option<CasimirCoefficient>) -> Result<ZeemanReport> {
    let paired = solve_trap(solver, settings, table, c3)?;
    let single_beams = build_beams(solver, &settings.with_directions_forward().beams, (settings.k_range[0], settings.k_range[1]))?;
    let single = TrapModel::new(&single_beams, table, settings.atom.f, c3, solver.params.t, settings.axis_sign)?;
    let r = paired.report.r_min_nm;
    let a = crate::constants::joule_to_mk(single.mf_spread(r));
    let b = paired.report.mf_spread_mk;
    let reduction = if a <= 0.0 { 1.0 } else { 1.0 - b / a };
    Ok(ZeemanReport { spread_single_mk: a, spread_paired_mk: b, reduction, r_min_nm: r })
}

/// One row of a wavelength scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub wavelength_nm: f64,
    pub feasible: bool,
    /// Lowest power on the power grid giving a bound minimum (mW).
    #[serde(rename = "min_power_mW")]
    pub min_power_mw: Option<f64>,
    pub distance_nm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    /// Contiguous feasible wavelength intervals (nm).
    pub intervals: Vec<[f64; 2]>,
}

/// Which beams a scan varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanColor {
    Red,
    Blue,
}

/// For each wavelength, moves the beams of `color` to it (following their
/// band) and searches the fixed power grid `step, 2·step, … ≤ cap`.
pub fn wavelength_scan(
    solver: &Solver,
    settings: &TrapSettings,
    table: &TransitionTable,
    c3: Option<CasimirCoefficient>,
    color: ScanColor,
    wavelengths: &[f64],
    power_cap_mw: f64,
    power_step_mw: f64,
) -> Result<ScanResult> {
    let is_color = |b: &BeamSpec| -> Result<bool> {
        let a = polarizability(table, Frequency::Real(b.omega()))?.alpha_s;
        Ok(match color {
            ScanColor::Red => a > 0.0,
            ScanColor::Blue => a < 0.0,
        })
    };
    let mask: Vec<bool> = settings.beams.iter().map(is_color).collect::<Result<_>>()?;
    let n_p = if power_step_mw > 0.0 { (power_cap_mw / power_step_mw + 1e-9).floor() as usize } else { 0 };
    let mut rows = Vec::new();
    for &wl in wavelengths {
        let mut specs = settings.beams.clone();
        for (s, &m) in specs.iter_mut().zip(&mask) {
            if m {
                s.wavelength_nm = wl;
                s.power_mw = 1.0;
            }
        }
        let beams = match build_beams(solver, &specs, (settings.k_range[0], settings.k_range[1])) {
            Ok(b) => b,
            Err(Error::Config(_)) | Err(Error::Resonance(_)) => {
                rows.push(ScanRow { wavelength_nm: wl, feasible: false, min_power_mw: None, distance_nm: None });
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut found = None;
        for ip in 1..=n_p {
            let p = power_step_mw * ip as f64;
            let scaled: Vec<Beam> = beams
                .iter()
                .zip(&mask)
                .map(|(b, &m)| if m { scale_beams(std::slice::from_ref(b), p).remove(0) } else { b.clone() })
                .collect();
            match trap_from_beams(solver, scaled, settings, table, c3) {
                Ok(t) if !t.report.double_well_z && t.report.freqs_mhz.iter().all(|f| f.is_finite()) => {
                    found = Some((p, t.report.distance_nm));
                    break;
                }
                Ok(_) | Err(Error::NoMinimum(_)) => {}
                Err(e) => return Err(e),
            }
        }
        rows.push(ScanRow { wavelength_nm: wl, feasible: found.is_some(), min_power_mw: found.map(|f| f.0), distance_nm: found.map(|f| f.1) });
    }
    let mut intervals: Vec<[f64; 2]> = Vec::new();
    let mut open: Option<[f64; 2]> = None;
    for r in &rows {
        match (r.feasible, open.as_mut()) {
            (true, Some(iv)) => iv[1] = r.wavelength_nm,
            (true, None) => open = Some([r.wavelength_nm, r.wavelength_nm]),
            (false, Some(_)) => intervals.push(open.take().unwrap()),
            (false, None) => {}
        }
    }
    if let Some(iv) = open {
        intervals.push(iv);
    }
    for iv in intervals.iter_mut() {
        if iv[0] > iv[1] {
            iv.swap(0, 1);
        }
    }
    Ok(ScanResult { rows, intervals })
}

/// Offset (fraction of `a`) between the x positions of the red and blue
/// intensity maxima along the line `(·, y, z)`, from the peak of their
/// circular cross-correlation.
pub fn intensity_offset(model: &TrapModel, y: f64, z: f64, n: usize) -> f64 {
    let a = model.a;
    let samples: Vec<(f64, f64)> = (0..n).map(|i| model.intensities([-a / 2.0 + a * i as f64 / n as f64, y, z])).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let red: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let blue: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (mr, mb) = (mean(&red), mean(&blue));
    let mut best = (f64::NEG_INFINITY, 0usize);
    for lag in 0..n {
        let c: f64 = (0..n).map(|i| (red[i] - mr) * (blue[(i + lag) % n] - mb)).sum();
        if c > best.0 {
            best = (c, lag);
        }
    }
    let frac = best.1 as f64 / n as f64;
    frac.min(1.0 - frac)
}
