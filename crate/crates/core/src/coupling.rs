//! Atom–mode coupling: channel-resolved Γ₁D, β, thermal β̃ and ellipticity.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atoms::{channel_strength, TransitionTable};
use crate::constants::KB;
use crate::error::{Error, Result};
use crate::pwe::Field3D;

/// Group velocities below this (units of c) are treated as a band edge.
pub const MIN_VG: f64 = 1e-6;

/// A dipole channel `|F mF⟩ → |F′ mF+q⟩` on the D2 line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub f: f64,
    pub mf: f64,
    pub q: i32,
    pub fp: f64,
}

impl Channel {
    /// The cycling transition `|2,2⟩ → |3,3⟩`.
    pub const CYCLING: Channel = Channel { f: 2.0, mf: 2.0, q: 1, fp: 3.0 };

    pub fn strength(&self, table: &TransitionTable) -> Result<f64> {
        let d2 = table.d2();
        channel_strength(d2.j, d2.jp, table.hyperfine.nuclear_spin, self.f, self.mf, self.q, self.fp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingOptions {
    /// Γ′ in units of Γ₀.
    pub gamma_prime: f64,
    /// Transition wavelength (nm); `None` takes the D2 line of the table.
    pub lambda0_nm: Option<f64>,
    /// Count decay into both propagation directions.
    pub both_directions: bool,
    /// `+1` quantizes along +z, `−1` along −z.
    pub axis_sign: f64,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        CouplingOptions { gamma_prime: 1.0, lambda0_nm: None, both_directions: false, axis_sign: -1.0 }
    }
}

impl CouplingOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_prime > 0.0) {
            return Err(Error::Config(format!("gamma_prime = {} must be positive", self.gamma_prime)));
        }
        if self.axis_sign.abs() != 1.0 {
            return Err(Error::Config(format!("axis_sign = {} must be ±1", self.axis_sign)));
        }
        if let Some(l) = self.lambda0_nm {
            if !(l > 0.0) {
                return Err(Error::Config(format!("lambda0_nm = {l} must be positive")));
            }
        }
        Ok(())
    }
}

/// Rotates the field into the frame whose z axis is `axis_sign · ẑ`.
fn to_axis_frame(e: [Complex64; 3], axis_sign: f64) -> [Complex64; 3] {
    [e[0], e[1] * axis_sign, e[2] * axis_sign]
}

/// `ê_q* · E` for the spherical basis `ê₊ = −(x̂+iŷ)/√2`, `ê₀ = ẑ`, `ê₋ = (x̂−iŷ)/√2`.
pub fn spherical_component(e: [Complex64; 3], q: i32, axis_sign: f64) -> Complex64 {
    let [ex, ey, ez] = to_axis_frame(e, axis_sign);
    let i = Complex64::i();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match q {
        1 => -(ex - i * ey) * s,
        -1 => (ex + i * ey) * s,
        _ => ez,
    }
}

/// `(f₋, f₀, f₊)`: intensity fractions in each spherical component.
pub fn polarization_fractions(e: [Complex64; 3], axis_sign: f64) -> [f64; 3] {
    let total: f64 = e.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return [0.0; 3];
    }
    [-1, 0, 1].map(|q| spherical_component(e, q, axis_sign).norm_sqr() / total)
}

/// `C = Im(E* × E)/|E|²`; `None` for a vanishing field.
pub fn ellipticity_vector(e: [Complex64; 3]) -> Option<[f64; 3]> {
    let total: f64 = e.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return None;
    }
    let c = |a: usize, b: usize| (e[a].conj() * e[b] - e[b].conj() * e[a]).im / total;
    Some([c(1, 2), c(2, 0), c(0, 1)])
}

/// Transition wavelength in nm.
fn lambda0(table: &TransitionTable, opts: &CouplingOptions) -> f64 {
    opts.lambda0_nm.unwrap_or(table.d2().lambda_nm)
}

/// `Γ₁D/Γ₀` for one channel from the local field of a unit-normalized mode.
///
/// `(3λ₀²/4π)(c/v_g) a |ê_q*·E|² / ∫_cell ε|E|²` times the channel's share
/// of the line strength.
pub fn gamma1d_from_field(
    e: [Complex64; 3],
    vg: f64,
    a_nm: f64,
    cell_integral: f64,
    strength: f64,
    q: i32,
    lambda0_nm: f64,
    opts: &CouplingOptions,
) -> Result<f64> {
    if !(vg.abs() > MIN_VG) {
        return Err(Error::ZeroVg(format!("v_g = {vg:e} c")));
    }
    let l = lambda0_nm * 1e-9;
    let proj = spherical_component(e, q, opts.axis_sign).norm_sqr();
    let dirs = if opts.both_directions { 2.0 } else { 1.0 };
    Ok(dirs * 3.0 * l * l / (4.0 * std::f64::consts::PI) / vg.abs() * a_nm * 1e-9 * proj / cell_integral * strength)
}

/// Channel-resolved Purcell factor at `pos` (nm).
pub fn gamma1d(mode: &Field3D, channel: &Channel, pos: [f64; 3], table: &TransitionTable, opts: &CouplingOptions) -> Result<f64> {
    let e = mode.field_at(pos[0], pos[1], pos[2]);
    let strength = channel.strength(table)?;
    // Field3D is normalized to a unit 3D cell integral
    gamma1d_from_field(e, mode.vg(), mode.a(), 1.0, strength, channel.q, lambda0(table, opts), opts)
}

/// `β = g/(g + Γ′/Γ₀)`.
pub fn beta_factor(gamma1d: f64, gamma_prime: f64) -> f64 {
    gamma1d / (gamma1d + gamma_prime)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingMap {
    /// Sample points (nm).
    pub points: Vec<[f64; 3]>,
    pub gamma1d_over_gamma0: Vec<f64>,
    pub beta: Vec<f64>,
    pub cz: Vec<f64>,
    pub f_sigma_plus: Vec<f64>,
    pub channel: Channel,
}

impl CouplingMap {
    pub fn to_csv(&self) -> String {
        use crate::io::fmt;
        let mut s = String::from("x_nm,y_nm,z_nm,gamma1d_over_gamma0,beta,Cz,f_sigma_plus\n");
        for i in 0..self.points.len() {
            let p = self.points[i];
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt(p[0]),
                fmt(p[1]),
                fmt(p[2]),
                fmt(self.gamma1d_over_gamma0[i]),
                fmt(self.beta[i]),
                fmt(self.cz[i]),
                fmt(self.f_sigma_plus[i])
            ));
        }
        s
    }
}

pub fn coupling_map(mode: &Field3D, channel: &Channel, points: &[[f64; 3]], table: &TransitionTable, opts: &CouplingOptions) -> Result<CouplingMap> {
    opts.validate()?;
    let strength = channel.strength(table)?;
    let l0 = lambda0(table, opts);
    let rows: Vec<Result<(f64, f64, f64)>> = points
        .par_iter()
        .map(|p| {
            let e = mode.field_at(p[0], p[1], p[2]);
            let g = gamma1d_from_field(e, mode.vg(), mode.a(), 1.0, strength, channel.q, l0, opts)?;
            let cz = ellipticity_vector(e).map_or(0.0, |c| c[2] * opts.axis_sign);
            let fp = polarization_fractions(e, opts.axis_sign)[2];
            Ok((g, cz, fp))
        })
        .collect();
    let mut map = CouplingMap { points: points.to_vec(), gamma1d_over_gamma0: vec![], beta: vec![], cz: vec![], f_sigma_plus: vec![], channel: *channel };
    for r in rows {
        let (g, cz, fp) = r?;
        map.gamma1d_over_gamma0.push(g);
        map.beta.push(beta_factor(g, opts.gamma_prime));
        map.cz.push(cz);
        map.f_sigma_plus.push(fp);
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticityMap {
    pub points: Vec<[f64; 3]>,
    /// `C(r)`; zero where masked.
    pub c: Vec<[f64; 3]>,
    pub f_sigma_plus: Vec<f64>,
    /// True where `|E|² < 1e-12 · max`.
    pub masked: Vec<bool>,
}

/// Ellipticity on the mode's own grid at height `z` (nm).
pub fn ellipticity(mode: &Field3D, z: f64, axis_sign: f64) -> EllipticityMap {
    let m = &mode.mode;
    let mut fields = Vec::with_capacity(m.nx * m.ny);
    let mut points = Vec::with_capacity(m.nx * m.ny);
    for ix in 0..m.nx {
        for iy in 0..m.ny {
            fields.push(mode.grid_field(ix, iy, z));
            points.push([m.x_at(ix), m.y_at(iy), z]);
        }
    }
    let max = fields.iter().map(|e| e.iter().map(|v| v.norm_sqr()).sum::<f64>()).fold(0.0, f64::max);
    let mut out = EllipticityMap { points, c: vec![], f_sigma_plus: vec![], masked: vec![] };
    for e in fields {
        let i2: f64 = e.iter().map(|v| v.norm_sqr()).sum();
        let masked = i2 < 1e-12 * max || i2 == 0.0;
        let c = if masked { [0.0; 3] } else { ellipticity_vector(e).unwrap_or([0.0; 3]) };
        out.c.push([c[0], c[1] * axis_sign, c[2] * axis_sign]);
        out.f_sigma_plus.push(if masked { 0.0 } else { polarization_fractions(e, axis_sign)[2] });
        out.masked.push(masked);
    }
    out
}

/// Boltzmann average of β over equally weighted samples `(U [J], β)`,
/// truncated at `U < U_min + 5 k_B T`.
pub fn beta_thermal(samples: &[(f64, f64)], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("temperature {temperature} K must be positive")));
    }
    let umin = samples.iter().map(|s| s.0).filter(|u| u.is_finite()).fold(f64::INFINITY, f64::min);
    if !umin.is_finite() {
        return Err(Error::NoMinimum("empty basin".into()));
    }
    let kt = KB * temperature;
    let (mut num, mut den) = (0.0, 0.0);
    for &(u, b) in samples {
        if u < umin + 5.0 * kt {
            let w = (-(u - umin) / kt).exp();
            num += w * b;
            den += w;
        }
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn circular_field_is_sigma_plus() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e = [c(s, 0.0), c(0.0, s), c(0.0, 0.0)];
        let cv = ellipticity_vector(e).unwrap();
        assert!((cv[2] - 1.0).abs() < 1e-15 && cv[0] == 0.0 && cv[1] == 0.0);
        let f = polarization_fractions(e, 1.0);
        assert!((f[2] - 1.0).abs() < 1e-15 && f[0] < 1e-15);
        let f = polarization_fractions(e, -1.0);
        assert!((f[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn real_field_is_linear() {
        let e = [c(0.3, 0.0), c(-1.2, 0.0), c(0.0, 0.0)];
        assert!(ellipticity_vector(e).unwrap().iter().all(|v| v.abs() < 1e-15));
        let f = polarization_fractions(e, 1.0);
        assert!((f[0] - 0.5).abs() < 1e-15 && (f[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta_factor(0.0, 1.0), 0.0);
        assert!((beta_factor(1.6, 1.0) - 0.615).abs() < 1e-3);
        let mut prev = 0.0;
        for g in [0.1, 1.0, 10.0, 1e3, 1e6] {
            let b = beta_factor(g, 1.0);
            assert!(b > prev && b < 1.0);
            prev = b;
        }
    }

    #[test]
    fn purcell_scales_with_inverse_vg() {
        let e = [c(1e3, 2e2), c(0.0, 4e2), c(0.0, 0.0)];
        let o = CouplingOptions::default();
        let g1 = gamma1d_from_field(e, 0.04, 212.0, 1.0, 1.0, 1, 780.0, &o).unwrap();
        let g2 = gamma1d_from_field(e, 0.02, 212.0, 1.0, 1.0, 1, 780.0, &o).unwrap();
        assert!((g2 / g1 - 2.0).abs() < 1e-12);
        assert!(matches!(gamma1d_from_field(e, 0.0, 212.0, 1.0, 1.0, 1, 780.0, &o), Err(Error::ZeroVg(_))));
        let both = CouplingOptions { both_directions: true, ..o };
        assert!((gamma1d_from_field(e, 0.04, 212.0, 1.0, 1.0, 1, 780.0, &both).unwrap() / g1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn thermal_average_limits() {
        let samples: Vec<(f64, f64)> = (0..50).map(|i| ((i as f64 - 20.0).powi(2) * 1e-28, 0.5 + 0.001 * i as f64)).collect();
        let cold = beta_thermal(&samples, 1e-9).unwrap();
        assert!((cold - 0.52).abs() < 1e-9);
        let flat: Vec<(f64, f64)> = samples.iter().map(|s| (s.0, 0.37)).collect();
        assert!((beta_thermal(&flat, 1e-3).unwrap() - 0.37).abs() < 1e-12);
    }
}
