// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod domains;
pub mod error;
pub mod grid;
pub mod meanfield;
pub mod pde_oracle;
pub mod quadrature;
pub mod rng;
pub mod scenario;
pub mod sde_sim;
pub mod target;
pub mod vectorfields;
pub mod verify;
