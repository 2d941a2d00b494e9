//! Prompt selection by prompt loss, mutual information, sensitivity and
//! prompt flatness (pFlat), with evaluation tooling and a SAM prefix tuner.

pub mod error;
pub mod evaluation;
pub mod flat_prefix;
pub mod io;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod planted;
pub mod prompt;
pub mod seed;
pub mod selection;

pub use error::{Error, ErrorClass, Result};
