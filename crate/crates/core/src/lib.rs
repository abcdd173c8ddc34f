//! Transformation optics on cavity-array metamaterials.
//!
//! A square array of identical, evanescently coupled cavities is deformed into
//! a circular cloak by relocating its sites. The tight-binding Hamiltonian
//! depends only on the bond graph, so the single-photon dynamics of the
//! deformed array is identical to that of the uniform one; what changes is
//! the physical separation of each bonded pair, which the inter-site
//! permittivity must compensate.
//!
//! Modules, bottom up:
//!
//! * [`lattice`]: square lattices, the cloak coordinate map, bare-hole controls.
//! * [`dispersion`]: band energy, group velocity, isofrequency contours, sources.
//! * [`hamiltonian`]: sparse single-excitation Hamiltonian and Chebyshev propagation.
//! * [`permittivity`]: cavity eigenmode, coupling integral, inverse permittivity solves.
//! * [`experiments`]: scenarios, field dumps and cloaking metrics.
//! * [`cli_io`]: configuration, lattice and dump file formats.

// `!(x > 0.0)` guards are deliberate: they reject NaN along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_io;
pub mod dispersion;
pub mod error;
pub mod experiments;
pub mod hamiltonian;
pub mod lattice;
pub mod permittivity;
pub mod quadrature;
pub mod special;

pub use error::{Error, ErrorClass, Result};

pub use num_complex::Complex64 as C64;
