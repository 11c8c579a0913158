//! Half-W1 photonic-crystal waveguide design toolkit.
//!
//! Geometry and dielectric maps live in [`lattice`], bands and Bloch modes
//! in [`pwe`], slow-light analysis and optimization in [`dispersion`],
//! ⁸⁷Rb data and angular-momentum algebra in [`atoms`], Purcell and β in
//! [`coupling`], two-color dipole traps in [`trap`] and the surface C₃
//! coefficient in [`casimir`].

pub mod constants;
pub mod error;
pub mod lattice;
pub mod pwe;
pub mod atoms;
pub mod dispersion;
pub mod casimir;
pub mod io;
pub mod coupling;
pub mod trap;

pub use error::{Error, Result};
