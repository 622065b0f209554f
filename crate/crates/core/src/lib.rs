pub mod bell;
pub mod branch;
pub mod causality;
pub mod error;
pub mod meters;
pub mod protocols;
pub mod statevec;

pub use error::{Error, Result};
