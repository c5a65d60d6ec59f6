pub mod bench;
pub mod check;
mod codec;
pub mod error;
pub mod instrument;
pub mod net;
pub mod nn;
pub mod online;
pub mod scalar;
pub mod shift;
pub mod synth;
pub mod tensor;
pub mod tensor_io;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::{Activation, Axis, ClipShape, FrameShape, FrameTensor, Tensor};
