//! Periodic plane-wave mean-field solver with a posteriori error estimates
//! for the ground-state energy, density and interatomic forces.

pub mod basis;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod gp;
pub mod grid;
pub mod lattice;
pub mod model;
pub mod orbitals;
pub mod solvers;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use basis::{sobolev_norm, FourierField, Miller, PlaneWaveBasis, RealField};
pub use error::{Error, Result};
pub use lattice::Lattice;
pub use model::{Atom, Density, FourierTerm, GridField, MeanFieldModel};
pub use orbitals::{CMatrix, OrbitalSet, TangentSet};
