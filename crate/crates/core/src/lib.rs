#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyticity;
pub mod control;
pub mod error;
pub mod expm;
pub mod family;
pub mod observability;
pub mod optimize;
pub mod quadrature;
pub mod sampling;
pub mod sets;
pub mod smallness;
pub mod spectral;

pub use error::{Error, Result};
