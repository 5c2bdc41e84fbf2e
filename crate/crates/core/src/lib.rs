//! Small eigenvalues of semiclassical Witten Laplacians for Morse-Bott
//! potentials: Eyring-Kramers predictions and independent numerical checks.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod manifolds;
pub mod potential;
pub mod quadrature;
pub mod sublevel;
pub mod labeling;
pub mod kramers;
pub mod spectral;
pub mod quasimodes;
pub mod sde;
pub mod config;
pub mod cli;
