//! Neural networks assembled from structure-preserving discrete flow maps.
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod flows;
pub mod linalg;
pub mod par;
pub mod params;
pub mod robust;
pub mod train;

pub use error::{Error, Result};
