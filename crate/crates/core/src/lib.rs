//! Parallel character + pinyin masked language model pretraining with a
//! frequency-weighted phonetic confusion set, and a harness that measures
//! robustness to homophone substitutions.

pub mod confusion;
pub mod error;
pub mod masking;
pub mod model;
pub mod pinyin;
pub mod seed;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
