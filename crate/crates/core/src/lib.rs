//! Radio digital twin: channel estimation with a Gaussian radio field,
//! replay-based continual channel prediction, and minimum-energy precoding
//! on the multiple-access capacity region.

pub mod continual;
pub mod error;
pub mod grf;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod precoder;
pub mod scene;
pub mod tensor_io;

pub use error::{Result, TwinError};
