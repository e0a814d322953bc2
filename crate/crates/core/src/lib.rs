//! Graph-based cross-modal feature complementation for multimodal
//! emotion recognition in conversation.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration
//! files and the command-line front end live in the `gcfc` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ablation;
pub mod autodiff;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod gatmlp;
pub mod graph;
pub mod metrics;
pub mod paircc;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
