#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coupling;
pub mod error;
pub mod io;
pub mod loewner;
pub mod reversibility;
pub mod sde;
pub mod special;

pub use error::{Error, Result};
