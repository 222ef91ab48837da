//! Role-aware multilinear knowledge-base completion.

pub mod error;
pub mod eval;
pub mod express;
pub mod kb;
pub mod math;
pub mod model;
pub mod train;

pub use error::{RamError, Result};
