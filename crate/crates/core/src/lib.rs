//! Spectral laboratory for mixtures of factorized Hartree states on a
//! periodic grid: evolution by operator splitting, conserved-quantity and
//! reduced-density checks, and both sides of the variance acceleration
//! identities with their localized remainder bounds.
//!
//! Conventions used throughout: the box is [-L/2, L/2)^d with n points per
//! axis, quadrature is the lattice sum times the cell volume, and pair
//! interactions act through circular convolution with a kernel sampled on
//! the same lattice. All reduced objects are evaluated from mixture
//! formulas; no k-particle kernel is ever materialized.

pub mod cutoff;
pub mod grid;
pub mod hierarchy;
pub mod potential;
pub mod quad;
pub mod solver;
pub mod virial;
