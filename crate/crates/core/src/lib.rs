//! From-scratch convolutional-network engine and experiment harness for
//! three-class chest X-ray classification.

pub mod arch;
pub mod augment;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod optimizer;
pub mod tensor;

pub use error::{Error, Result};
