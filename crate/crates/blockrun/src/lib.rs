//! blockrun: a block-sparse neural inference runtime for frame-by-frame video
//! processing.
//!
//! Frames are split into square blocks. A lightweight policy network decides
//! per block whether to execute the task network's convolutions or to copy
//! the block's cached features from the previous frame. The policy is trained
//! online with REINFORCE from an information-gain reward derived from the
//! task output itself, so no labels are involved; a cost reward steers the
//! average executed fraction towards a target `tau`.

pub mod clip;
pub mod config;
pub mod error;
pub mod info_gain;
pub mod output;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod runtime;
pub mod selftest;
pub mod tasks;
pub mod tensor;
pub mod viz;

pub use error::{Error, Result};
