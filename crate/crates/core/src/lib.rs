pub mod cli;
pub mod error;
pub mod estimate_lab;
pub mod grid;
pub mod jump_mc;
pub mod kernel;
pub mod lp_norms;
pub mod singular_ops;
pub mod symbol;
pub mod zakai;

pub use error::{LabError, Result};
