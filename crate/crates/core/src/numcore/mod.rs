//! Real/complex image arrays, the centered FFT, and the autodiff tape.

pub mod autodiff;
mod conv;
pub mod fft;
pub mod image;
pub mod stats;
pub mod tensor;

pub use autodiff::{BackwardOp, Gradients, Graph, Node};
pub use fft::{fft2_centered, ifft2_centered};
pub use image::{magnitude, ComplexImage, KSpaceGrid, RealImage};
pub use tensor::Tensor;
