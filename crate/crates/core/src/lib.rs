pub mod analysis;
pub mod codec;
pub mod error;
pub mod harness;
pub mod idsens;
pub mod lm;
pub mod probe;
pub mod recon;
pub mod rvq;
pub mod signal;

pub use error::{Error, Result};
