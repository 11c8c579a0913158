//! Command configuration documents (JSON). Every key is optional; absent keys
//! take the design defaults.

use serde::{Deserialize, Serialize};
use slowlight::coupling::{Channel, CouplingOptions};
use slowlight::dispersion::OptimizationSpec;
use slowlight::lattice::{StructureConfig, StructureParams};
use slowlight::pwe::DEFAULT_ORDER;
use slowlight::trap::{ModeRef, ScanColor, TrapSettings};
use slowlight::{Error, Result};

fn paper_structure() -> StructureConfig {
    StructureConfig::from_params(&StructureParams::paper_unperturbed())
}

fn check_order(order: f64) -> Result<()> {
    if !(order >= 1.0) {
        return Err(Error::Config(format!("order = {order} must be at least 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlabNeffConfig {
    pub n_slab: f64,
    pub t_nm: f64,
    pub wavelengths_nm: Vec<f64>,
}

impl Default for SlabNeffConfig {
    fn default() -> Self {
        SlabNeffConfig { n_slab: 3.34, t_nm: 150.0, wavelengths_nm: (0..=20).map(|i| 700.0 + 5.0 * i as f64).collect() }
    }
}

impl SlabNeffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_slab > 1.0 && self.t_nm > 0.0) {
            return Err(Error::Config("need n_slab > 1 and t_nm > 0".into()));
        }
        if self.wavelengths_nm.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("wavelengths_nm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsConfig {
    pub structure: StructureConfig,
    pub order: f64,
    pub n_k: usize,
    pub n_bands: usize,
    /// k_y samples for the projected bulk gaps.
    pub n_ky: usize,
}

impl Default for BandsConfig {
    fn default() -> Self {
        BandsConfig { structure: paper_structure(), order: DEFAULT_ORDER, n_k: 64, n_bands: 12, n_ky: 9 }
    }
}

impl BandsConfig {
    pub fn validate(&self) -> Result<StructureParams> {
        check_order(self.order)?;
        if self.n_k < 2 || self.n_bands == 0 || self.n_ky < 2 {
            return Err(Error::Config("need n_k ≥ 2, n_bands ≥ 1, n_ky ≥ 2".into()));
        }
        self.structure.to_params()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeFieldConfig {
    pub structure: StructureConfig,
    pub order: f64,
    pub mode: ModeRef,
}

impl Default for ModeFieldConfig {
    fn default() -> Self {
        ModeFieldConfig { structure: paper_structure(), order: DEFAULT_ORDER, mode: slow_mode() }
    }
}

impl ModeFieldConfig {
    pub fn validate(&self) -> Result<StructureParams> {
        check_order(self.order)?;
        check_mode(&self.mode)?;
        self.structure.to_params()
    }
}

/// Slow-band mode used by default for coupling and field maps.
pub fn slow_mode() -> ModeRef {
    ModeRef { k_frac: Some(0.72), near_thz: 360.0 }
}

fn check_mode(m: &ModeRef) -> Result<()> {
    if let Some(k) = m.k_frac {
        if !(k > 0.0 && k <= 1.0) {
            return Err(Error::Config(format!("mode.k_frac = {k} outside (0, 1]")));
        }
    }
    if !(m.near_thz > 0.0) {
        return Err(Error::Config("mode.near_THz must be positive".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub structure: StructureConfig,
    pub spec: OptimizationSpec,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig { structure: paper_structure(), spec: OptimizationSpec::default() }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<StructureParams> {
        self.spec.validate()?;
        self.structure.to_params()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PurcellConfig {
    pub structure: StructureConfig,
    pub order: f64,
    /// Mode; without `k_frac` the band is followed to the transition frequency.
    pub mode: ModeRef,
    pub channel: Channel,
    pub coupling: CouplingOptions,
    /// Atom position: distance from the edge, x and z (nm).
    pub distance_nm: f64,
    pub x_nm: Option<f64>,
    pub z_nm: f64,
    /// Distances of the radial profile (nm).
    pub profile_nm: Vec<f64>,
}

impl Default for PurcellConfig {
    fn default() -> Self {
        PurcellConfig {
            structure: paper_structure(),
            order: DEFAULT_ORDER,
            mode: slow_mode(),
            channel: Channel::CYCLING,
            coupling: CouplingOptions::default(),
            distance_nm: 115.0,
            x_nm: None,
            z_nm: 0.0,
            profile_nm: (0..=27).map(|i| 30.0 + 10.0 * i as f64).collect(),
        }
    }
}

impl PurcellConfig {
    pub fn validate(&self) -> Result<StructureParams> {
        check_order(self.order)?;
        check_mode(&self.mode)?;
        self.coupling.validate()?;
        if !(self.distance_nm > 0.0) || self.profile_nm.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("distances must be positive".into()));
        }
        self.structure.to_params()
    }
}

/// Targets for rescaling the red and blue powers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTarget {
    pub distance_nm: f64,
    #[serde(rename = "depth_mK")]
    pub depth_mk: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapConfig {
    pub structure: StructureConfig,
    pub order: f64,
    pub settings: TrapSettings,
    pub calibration: Option<CalibrationTarget>,
}

impl Default for TrapConfig {
    fn default() -> Self {
        TrapConfig { structure: paper_structure(), order: DEFAULT_ORDER, settings: TrapSettings::default(), calibration: None }
    }
}

impl TrapConfig {
    pub fn validate(&self) -> Result<StructureParams> {
        check_order(self.order)?;
        self.settings.validate()?;
        if let Some(c) = self.calibration {
            if !(c.distance_nm > 0.0 && c.depth_mk > 0.0) {
                return Err(Error::Config("calibration targets must be positive".into()));
            }
        }
        self.structure.to_params()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.to - self.from) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.from + self.step * i as f64).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapScanConfig {
    pub structure: StructureConfig,
    pub order: f64,
    pub settings: TrapSettings,
    pub color: ScanColor,
    pub wavelengths_nm: Range,
    #[serde(rename = "power_cap_mW")]
    pub power_cap_mw: f64,
    #[serde(rename = "power_step_mW")]
    pub power_step_mw: f64,
}

impl Default for TrapScanConfig {
    fn default() -> Self {
        TrapScanConfig {
            structure: paper_structure(),
            order: DEFAULT_ORDER,
            settings: TrapSettings::default(),
            color: ScanColor::Blue,
            wavelengths_nm: Range { from: 720.0, to: 745.0, step: 1.0 },
            power_cap_mw: 5.0,
            power_step_mw: 0.25,
        }
    }
}

impl TrapScanConfig {
    pub fn validate(&self) -> Result<StructureParams> {
        check_order(self.order)?;
        self.settings.validate()?;
        let r = self.wavelengths_nm;
        if !(r.from > 0.0 && r.to >= r.from && r.step > 0.0) {
            return Err(Error::Config("wavelengths_nm needs 0 < from ≤ to and step > 0".into()));
        }
        if !(self.power_cap_mw >= 0.0 && self.power_step_mw > 0.0) {
            return Err(Error::Config("need power_cap_mW ≥ 0 and power_step_mW > 0".into()));
        }
        self.structure.to_params()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeemanConfig {
    pub structure: StructureConfig,
    pub order: f64,
    pub settings: TrapSettings,
}

impl Default for ZeemanConfig {
    fn default() -> Self {
        ZeemanConfig { structure: paper_structure(), order: DEFAULT_ORDER, settings: TrapSettings::default() }
    }
}

impl ZeemanConfig {
    pub fn validate(&self) -> Result<StructureParams> {
        check_order(self.order)?;
        self.settings.validate()?;
        self.structure.to_params()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C3Config {
    /// Restrict the polarizability to the D lines.
    pub d_lines_only: bool,
}
