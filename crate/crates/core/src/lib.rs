//! Dual-path cooperative filtering for image completion.
//!
//! A feature-extraction path encodes the masked image, filters its
//! mid-level features with per-pixel kernels predicted by a second path,
//! refines them with Fast Fourier Convolution residual blocks, and decodes
//! the completed image. Everything runs on a small `f64` tensor engine with
//! tape-based reverse-mode gradients.

pub mod autograd;
pub mod error;
pub mod ffc;
pub mod filtering;
pub mod gradcheck;
pub mod gradsuite;
pub mod linalg;
pub mod losses;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod params;
pub mod pipeline;
pub mod spectral;
pub mod tensor;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use masks::MaskGrid;
pub use model::{DcfConfig, DcfNet};
pub use ops::conv::{ConvSpec, Padding};
pub use params::{ParamId, ParamKind, ParamStore};
pub use tensor::{Shape, Tensor};
