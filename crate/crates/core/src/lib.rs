//! Dynamic homogenization of periodic layered elastic composites.
//!
//! A unit cell is split into subregions carrying piecewise-constant
//! eigenstress and eigenvelocity in a homogeneous reference medium. Solving
//! the subregion-averaged consistency conditions yields the coupled overall
//! parameters `D_bar`, `rho_bar`, `S1`, `S2` at any `(omega, q)`, from which
//! dispersion branches and on-branch effective properties follow. The
//! [`oracle`] module provides the exact transfer-matrix solution for
//! comparison.

pub mod dispersion;
pub mod error;
pub mod fields;
pub mod homogenizer;
pub mod oracle;
pub mod spectral;
pub mod unit_cell;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
