//! PyFormer: a pyramid hierarchical transformer for hyperspectral image
//! classification, with the tensor and autodiff machinery it runs on.

pub mod data;
pub mod error;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tape, Tensor, Var};
