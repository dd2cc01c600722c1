//! Solvers for momentum-space pair creation of spin excitations in a
//! dipolar XXZ bilayer.
//!
//! Layer A starts fully polarized up, layer B down. Inter-layer flip-flops
//! create correlated pairs at opposite momenta. The crate provides three
//! mutually checking descriptions of that process: closed-form Bogoliubov
//! theory on the Brillouin zone ([`bogoliubov_k`]), a real-space
//! Bogoliubov-de Gennes solver for arbitrary filling and boundaries
//! ([`bogoliubov_real`]), and discrete truncated Wigner spin dynamics
//! ([`dtwa`]). [`ed_oracle`] evolves small systems exactly.
//!
//! Energies are in units of J, times in units of hbar/J, lengths in units of
//! the in-plane spacing.

// `!(x > 0.0)` is used on purpose so that NaN fails parameter checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bogoliubov_k;
pub mod bogoliubov_real;
pub mod couplings;
pub mod dtwa;
pub mod ed_oracle;
pub mod error;
pub mod io_schema;
pub mod lattice;
pub mod observables;
mod rng;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
