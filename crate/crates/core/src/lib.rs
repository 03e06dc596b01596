//! An impurity atom in a tunable harmonic trap, immersed in a one-dimensional
//! Bose-Hubbard superfluid, used as a spectroscopic probe of the Bogoliubov
//! dispersion.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bogoliubov;
pub mod io;
pub mod lattice_wannier;
pub mod probe;
pub mod protocol;
pub mod quadrature;
pub mod rates;
pub mod sum;
pub mod system;
