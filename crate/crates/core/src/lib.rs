//! Vehicle instance segmentation with a boundary-aware multi-task residual
//! fully convolutional network.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod mask_ops;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
