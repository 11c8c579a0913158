//! Surface C₃ coefficient of a ground-state atom near a dielectric half-space.
//!
//! `C₃ = ħ/(4π·4πε₀) ∫₀^∞ α(iξ) (ε(iξ)−1)/(ε(iξ)+1) dξ`, with `ε(iξ)` from
//! tabulated `ε′(ω)` through the Kramers–Kronig relation
//! `ε(iξ) = 1 + (2ξ/π) ∫₀^∞ (ε′(ω)−1)/(ω²+ξ²) dω`.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::atoms::{polarizability, Frequency, TransitionTable};
use crate::constants::{EPS0, H, HBAR, QE};
use crate::error::{Error, Result};

const BUNDLED_GAINP: &str = include_str!("../data/gainp_permittivity.csv");

/// Header columns of a permittivity file.
pub const PERMITTIVITY_COLUMNS: [&str; 3] = ["energy_eV", "eps1", "eps2"];

/// rad/s per eV.
pub const EV_TO_RAD_S: f64 = QE / HBAR;

#[derive(Debug, Clone, PartialEq)]
pub struct PermittivityTable {
    /// `(photon energy eV, ε′, ε″)`, strictly increasing in energy.
    pub samples: Vec<(f64, f64, f64)>,
    pub provenance: String,
}

/// Two damped Lorentz oscillators: a weak band-edge term and the main
/// interband term, with strength fixed by the refractive index at one wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzModel {
    /// `(strength, resonance eV, damping eV)` per oscillator.
    pub oscillators: [(f64, f64, f64); 2],
}

impl LorentzModel {
    pub fn eps(&self, energy_ev: f64) -> Complex64 {
        let mut e = Complex64::new(1.0, 0.0);
        for &(s, e0, g) in &self.oscillators {
            e += s * e0 * e0 / Complex64::new(e0 * e0 - energy_ev * energy_ev, -g * energy_ev);
        }
        e
    }

    /// Exact imaginary-axis value.
    pub fn eps_imag_axis(&self, xi_ev: f64) -> f64 {
        1.0 + self.oscillators.iter().map(|&(s, e0, g)| s * e0 * e0 / (e0 * e0 + xi_ev * xi_ev + g * xi_ev)).sum::<f64>()
    }

    /// GaInP model: band-edge oscillator at 1.95 eV, interband oscillator at
    /// 4.5 eV whose strength reproduces n = 3.34 at 780 nm.
    pub fn gainp() -> Self {
        let edge = (0.4, 1.95, 0.1);
        let (e_main, g_main) = (4.5, 0.8);
        let e780 = crate::constants::H * crate::constants::C / (780e-9 * QE);
        let n_at = |s: f64| LorentzModel { oscillators: [edge, (s, e_main, g_main)] }.eps(e780).sqrt().re;
        let (mut lo, mut hi) = (0.0, 30.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if n_at(mid) < 3.34 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        LorentzModel { oscillators: [edge, (0.5 * (lo + hi), e_main, g_main)] }
    }

    /// Table on a log-spaced energy grid.
    pub fn table(&self, e_min: f64, e_max: f64, n: usize, provenance: &str) -> PermittivityTable {
        let samples = (0..n)
            .map(|i| {
                let e = e_min * (e_max / e_min).powf(i as f64 / (n - 1) as f64);
                let v = self.eps(e);
                (e, v.re, v.im)
            })
            .collect();
        PermittivityTable { samples, provenance: provenance.to_string() }
    }
}

impl PermittivityTable {
    /// GaInP table shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_csv_str(BUNDLED_GAINP).expect("bundled permittivity table parses")
    }

    /// `dir/gainp_permittivity.csv` if present, else the bundled table.
    pub fn load(dir: Option<&Path>) -> Result<Self> {
        match dir.map(|d| d.join("gainp_permittivity.csv")) {
            Some(p) if p.exists() => Self::from_path(&p),
            _ => Ok(Self::bundled()),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut t = Self::from_csv_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if t.provenance.is_empty() {
            t.provenance = path.display().to_string();
        }
        Ok(t)
    }

    /// Parses `energy_eV, eps1, eps2`; leading `# source: …` sets the provenance.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut provenance = String::new();
        let mut body = Vec::new();
        for line in text.lines() {
            if let Some(c) = line.strip_prefix('#') {
                if let Some(src) = c.trim().strip_prefix("source:") {
                    provenance = src.trim().to_string();
                }
            } else {
                body.push(line);
            }
        }
        let body = body.join("\n");
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols != PERMITTIVITY_COLUMNS {
            return Err(Error::Parse(format!("columns {cols:?} differ from {PERMITTIVITY_COLUMNS:?}")));
        }
        let mut samples = Vec::new();
        for (n, rec) in rdr.deserialize::<(f64, f64, f64)>().enumerate() {
            samples.push(rec.map_err(|e| Error::Parse(format!("row {}: {e}", n + 1)))?);
        }
        let t = PermittivityTable { samples, provenance };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 4 {
            return Err(Error::TableRange("fewer than four samples".into()));
        }
        if self.samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Parse("energies must be strictly increasing".into()));
        }
        let (lo, hi) = (self.samples[0].0, self.samples[self.samples.len() - 1].0);
        if lo > 0.5 || hi < 6.0 {
            return Err(Error::TableRange(format!("table spans {lo}..{hi} eV, need at least 0.5..6 eV")));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if !self.provenance.is_empty() {
            s.push_str(&format!("# source: {}\n", self.provenance));
        }
        s.push_str("energy_eV,eps1,eps2\n");
        for (e, a, b) in &self.samples {
            s.push_str(&format!("{},{},{}\n", crate::io::fmt(*e), crate::io::fmt(*a), crate::io::fmt(*b)));
        }
        s
    }

    /// `(B, D)` of the asymptotic form `ε′ − 1 ≈ −B/ω² − D/ω⁴` (eV units),
    /// least-squares over the top decade of the table.
    fn tail_fit(&self) -> (f64, f64) {
        let emax = self.samples[self.samples.len() - 1].0;
        let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(e, e1, _) in self.samples.iter().filter(|s| s.0 >= emax / 10.0) {
            // basis functions scaled to O(1) at the top of the table
            let (u1, u2) = ((emax / e).powi(2), (emax / e).powi(4));
            let y = -(e1 - 1.0);
            s11 += u1 * u1;
            s12 += u1 * u2;
            s22 += u2 * u2;
            r1 += u1 * y;
            r2 += u2 * y;
        }
        let det = s11 * s22 - s12 * s12;
        let (c1, c2) = if det.abs() > 1e-300 { ((r1 * s22 - r2 * s12) / det, (s11 * r2 - s12 * r1) / det) } else { (r1 / s11, 0.0) };
        (c1 * emax * emax, c2 * emax.powi(4))
    }
}

/// `ε(iξ)` from the real part of the table (ξ in rad/s).
///
/// The table is integrated exactly as a piecewise-linear function, with
/// constant `ε′` below the first sample and a fitted `−B/ω² − D/ω⁴` tail
/// above the last.
pub fn eps_imaginary_axis(table: &PermittivityTable, xi: f64) -> Result<f64> {
    if !(xi > 0.0) {
        return Err(Error::Domain(format!("ξ = {xi} must be positive")));
    }
    let x = xi / EV_TO_RAD_S;
    let s = &table.samples;
    // ∫ (p + q ω)/(ω² + x²) dω = (p/x) atan(ω/x) + (q/2) ln(ω² + x²)
    let mut acc = (s[0].1 - 1.0) / x * (s[0].0 / x).atan();
    for w in s.windows(2) {
        let (e0, f0) = (w[0].0, w[0].1 - 1.0);
        let (e1, f1) = (w[1].0, w[1].1 - 1.0);
        let q = (f1 - f0) / (e1 - e0);
        let p = f0 - q * e0;
        // atan difference in a cancellation-free form
        let datan = ((e1 - e0) * x / (x * x + e0 * e1)).atan();
        let dlog = ((e1 * e1 + x * x) / (e0 * e0 + x * x)).ln();
        acc += p / x * datan + 0.5 * q * dlog;
    }
    let emax = s[s.len() - 1].0;
    let (b, d) = table.tail_fit();
    acc += tail_integral(emax, x, b, d) / x;
    Ok(1.0 + 2.0 * x / PI * acc)
}

/// `x·∫_W^∞ (−B/ω² − D/ω⁴)/(ω² + x²) dω` via `u = 1/ω` and Simpson's rule.
fn tail_integral(w: f64, x: f64, b: f64, d: f64) -> f64 {
    let n = 400;
    let umax = 1.0 / w;
    let h = umax / n as f64;
    let f = |u: f64| (-b * u * u - d * u.powi(4)) / (1.0 + x * x * u * u);
    let mut s = f(0.0) + f(umax);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    x * s * h / 3.0
}

/// Independent route through the absorptive part,
/// `ε(iξ) = 1 + (2/π) ∫ ω ε″(ω)/(ω²+ξ²) dω` (table range only).
pub fn eps_imaginary_axis_from_loss(table: &PermittivityTable, xi: f64) -> f64 {
    let x = xi / EV_TO_RAD_S;
    let mut acc = 0.0;
    for w in table.samples.windows(2) {
        let (e0, g0) = (w[0].0, w[0].2);
        let (e1, g1) = (w[1].0, w[1].2);
        let q = (g1 - g0) / (e1 - e0);
        let p = g0 - q * e0;
        // ∫ ω(p + qω)/(ω²+x²) = (p/2) ln(ω²+x²) + q(ω − x atan(ω/x))
        let datan = ((e1 - e0) * x / (x * x + e0 * e1)).atan();
        acc += 0.5 * p * ((e1 * e1 + x * x) / (e0 * e0 + x * x)).ln() + q * ((e1 - e0) - x * datan);
    }
    1.0 + 2.0 / PI * acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CasimirCoefficient {
    /// J·m³.
    pub c3_si: f64,
    /// `C₃/h` in Hz·µm³.
    pub c3_spectroscopic: f64,
    /// Relative change under the last node doubling.
    pub quadrature_error: f64,
    pub nodes: usize,
}

impl CasimirCoefficient {
    pub fn from_si(c3_si: f64, quadrature_error: f64, nodes: usize) -> Self {
        CasimirCoefficient { c3_si, c3_spectroscopic: c3_si / H * 1e18, quadrature_error, nodes }
    }
}

/// Integration range in ξ (rad/s).
pub const XI_RANGE: (f64, f64) = (1e8, 1e19);

/// Quadrature of `ħ/(4π·4πε₀) ∫ f(ξ) dξ` on a log grid with node doubling.
///
/// The piece below the lower bound is added with `f` frozen at its value
/// there. Fails if the final doubling still moves the result by more than 1%.
pub fn xi_quadrature(f: &(dyn Fn(f64) -> f64 + Sync)) -> Result<CasimirCoefficient> {
    let (lo, hi) = (XI_RANGE.0.ln(), XI_RANGE.1.ln());
    let eval = |n: usize| -> (f64, Vec<f64>) {
        let h = (hi - lo) / n as f64;
        let vals: Vec<f64> = (0..=n).into_par_iter().map(|i| {
            let xi = (lo + i as f64 * h).exp();
            xi * f(xi)
        }).collect();
        let mut s = vals[0] + vals[n];
        for (i, v) in vals.iter().enumerate().take(n).skip(1) {
            s += v * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        (s * h / 3.0 + XI_RANGE.0 * f(XI_RANGE.0), vals)
    };
    let mut n = 128;
    let (mut prev, _) = eval(n);
    let mut err = f64::INFINITY;
    let mut vals = Vec::new();
    while n < 1 << 15 {
        n *= 2;
        let (cur, v) = eval(n);
        err = ((cur - prev) / cur).abs();
        prev = cur;
        vals = v;
        if err < 1e-7 {
            break;
        }
    }
    if err > 0.01 {
        return Err(Error::Convergence(format!("C₃ quadrature moved by {:.2}% under doubling", err * 100.0)));
    }
    let peak = vals.iter().cloned().fold(0.0, f64::max);
    let ends = vals[0].abs().max(vals[vals.len() - 1].abs());
    if ends > 1e-6 * peak {
        return Err(Error::Convergence(format!("integrand at the ξ bounds is {:.1e} of its peak", ends / peak)));
    }
    let c3 = HBAR / (4.0 * PI) * prev / (4.0 * PI * EPS0);
    Ok(CasimirCoefficient::from_si(c3, err, n))
}

/// C₃ of the ground-state atom in front of the tabulated dielectric.
pub fn compute_c3(table: &PermittivityTable, atoms: &TransitionTable) -> Result<CasimirCoefficient> {
    table.validate()?;
    // surface the first failure instead of integrating NaNs
    eps_imaginary_axis(table, 1e15)?;
    let f = |xi: f64| {
        let a = polarizability(atoms, Frequency::Imaginary(xi)).map(|p| p.alpha_s).unwrap_or(f64::NAN);
        let e = eps_imaginary_axis(table, xi).unwrap_or(f64::NAN);
        a * (e - 1.0) / (e + 1.0)
    };
    xi_quadrature(&f)
}

/// `U = −C₃/d³` (J) at distance `d_nm`.
pub fn plane_potential(c3: &CasimirCoefficient, d_nm: f64) -> f64 {
    -c3.c3_si / (d_nm * 1e-9).powi(3)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_oscillator(s: f64, e0: f64, g: f64) -> LorentzModel {
        LorentzModel { oscillators: [(s, e0, g), (0.0, 10.0, 1.0)] }
    }

    #[test]
    fn lorentz_oracle() {
        let m = single_oscillator(8.0, 4.0, 0.2);
        let t = m.table(0.05, 200.0, 3000, "synthetic");
        for xi_ev in [0.1, 0.5, 1.0, 3.0, 10.0, 40.0] {
            let got = eps_imaginary_axis(&t, xi_ev * EV_TO_RAD_S).unwrap();
            let want = m.eps_imag_axis(xi_ev);
            assert!(((got - want) / want).abs() < 0.005, "ξ={xi_ev}: {got} vs {want}");
        }
    }

    #[test]
    fn loss_route_agrees_with_real_part_route() {
        let t = LorentzModel::gainp().table(0.05, 200.0, 3000, "model");
        for xi_ev in [0.3, 1.0, 3.0] {
            let a = eps_imaginary_axis(&t, xi_ev * EV_TO_RAD_S).unwrap();
            let b = eps_imaginary_axis_from_loss(&t, xi_ev * EV_TO_RAD_S);
            assert!(((a - b) / a).abs() < 0.01, "{a} vs {b}");
        }
    }

    #[test]
    fn imaginary_axis_monotone_and_asymptotic() {
        let t = PermittivityTable::bundled();
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let xi = 10f64.powf(13.0 + 0.1 * k as f64);
            let e = eps_imaginary_axis(&t, xi).unwrap();
            assert!(e < prev && e > 1.0, "ξ={xi:e}: {e}");
            prev = e;
        }
        assert!(eps_imaginary_axis(&t, 1e19).unwrap() - 1.0 < 1e-3);
    }

    #[test]
    fn bundled_table_is_the_model() {
        let t = PermittivityTable::bundled();
        let m = LorentzModel::gainp();
        for &(e, e1, e2) in &t.samples {
            let v = m.eps(e);
            assert!((v.re - e1).abs() < 1e-6 * v.norm() && (v.im - e2).abs() < 1e-6 * v.norm());
        }
        assert!(!t.provenance.is_empty());
        let n780 = m.eps(1239.841984 / 780.0).sqrt().re;
        assert!((n780 - 3.34).abs() < 1e-9);
    }

    #[test]
    fn narrow_table_rejected() {
        let t = LorentzModel::gainp().table(1.0, 4.0, 50, "narrow");
        assert!(matches!(t.validate(), Err(Error::TableRange(_))));
    }

    #[test]
    fn single_pole_integral() {
        // α = A ω₀²/(ω₀²+ξ²), reflection r ω₁²/(ω₁²+ξ²): ∫ = A r π ω₀ω₁ / 2(ω₀+ω₁)
        let (a0, w0, r, w1) = (5e-39, 3e15, 0.7, 8e15);
        let c = xi_quadrature(&|xi: f64| a0 * w0 * w0 / (w0 * w0 + xi * xi) * r * w1 * w1 / (w1 * w1 + xi * xi)).unwrap();
        let exact = HBAR / (4.0 * PI) * a0 * r * PI * w0 * w1 / (2.0 * (w0 + w1)) / (4.0 * PI * EPS0);
        assert!(((c.c3_si - exact) / exact).abs() < 0.005);
        assert!((c.c3_spectroscopic * H / 1e18 - c.c3_si).abs() <= 1e-12 * c.c3_si);
    }
}
