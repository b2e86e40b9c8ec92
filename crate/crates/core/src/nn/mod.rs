//! Minimal CPU network engine: NCHW tensors, layers with explicit adjoints,
//! and an Adam optimizer.

mod adam;
mod conv;
mod linear;
mod norm;
pub mod ops;
mod param;
mod real;
mod tensor;

pub use adam::Adam;
pub use conv::Conv2d;
#[allow(unused_imports)]
pub(crate) use conv::{col2im, im2col, ColGeometry};
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use ops::MaxPool;
pub use param::{Module, Param};
pub use real::{gemm, Layout, Real};
pub use tensor::{reflect_index, Tensor};
