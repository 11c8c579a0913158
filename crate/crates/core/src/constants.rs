//! Physical constants (CODATA 2018, SI) and unit helpers.

/// Speed of light in vacuum (m/s).
pub const C: f64 = 299_792_458.0;
/// Speed of light in nm/s.
pub const C_NM: f64 = C * 1e9;
/// Planck constant (J·s).
pub const H: f64 = 6.626_070_15e-34;
/// Reduced Planck constant (J·s).
pub const HBAR: f64 = H / (2.0 * std::f64::consts::PI);
/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.854_187_812_8e-12;
/// Boltzmann constant (J/K).
pub const KB: f64 = 1.380_649e-23;
/// Elementary charge (C).
pub const QE: f64 = 1.602_176_634e-19;
/// Bohr radius (m).
pub const A0: f64 = 5.291_772_109_03e-11;
/// Atomic unit of dipole moment e·a0 (C·m).
pub const EA0: f64 = QE * A0;
/// Mass of ⁸⁷Rb (kg).
pub const RB87_MASS: f64 = 1.443_160_648e-25;

/// Energy in joules to temperature-equivalent millikelvin.
pub fn joule_to_mk(e: f64) -> f64 {
    e / KB * 1e3
}

/// Temperature-equivalent millikelvin to joules.
pub fn mk_to_joule(t_mk: f64) -> f64 {
    t_mk * 1e-3 * KB
}

/// Vacuum wavelength (nm) of a linear frequency given in THz.
pub fn thz_to_nm(nu_thz: f64) -> f64 {
    C_NM / (nu_thz * 1e12)
}

/// Linear frequency (THz) of a vacuum wavelength given in nm.
pub fn nm_to_thz(lambda_nm: f64) -> f64 {
    C_NM / lambda_nm / 1e12
}

/// Angular frequency (rad/s) of a vacuum wavelength given in nm.
pub fn nm_to_omega(lambda_nm: f64) -> f64 {
    2.0 * std::f64::consts::PI * C_NM / lambda_nm
}
