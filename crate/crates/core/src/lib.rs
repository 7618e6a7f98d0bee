//! Joint blind-spot denoising and segmentation.
//!
//! A small reverse-mode autodiff engine drives two U-Nets: a residual
//! denoiser trained with a blind-spot masked loss, and a segmentation network
//! that is either trained jointly with it (labelled data) or kept frozen and
//! used as a style prior (unlabelled data).

pub mod autodiff;
pub mod blindspot;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
