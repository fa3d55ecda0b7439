//! Riccati feedback control of semilinear PDEs with POD-DEIM reduction and
//! online Bayesian identification of the model coefficients.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod identification;
pub mod integrate;
pub mod linalg;
pub mod pde;
pub mod riccati;
pub mod rom;

pub use error::{Error, Result};
