//! Numerics for the Huang–Yang–Luttinger (HYL) Bose gas in its loop
//! (cycle-length) representation: polylogarithms, free-gas thermodynamics,
//! the condensate variational problem, the infinite-dimensional loop-density
//! rate function, exact finite-volume partition functions and a Monte Carlo
//! sampler over loop-length configurations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod condensate;
pub mod error;
pub mod finite_volume;
pub mod full_hyl;
pub mod monte_carlo;
pub mod roots;
pub mod special;
pub mod thermo;

pub use error::{Error, Result};
