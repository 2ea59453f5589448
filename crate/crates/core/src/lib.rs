//! Structure-preserving infrared/visible image fusion.
//!
//! The pipeline fuses a registered infrared/visible pair on the luminance
//! channel: classical binary structure maps steer a small multi-scale
//! encoder/decoder, a structure-preserving merge amplifies features that
//! exist in only one modality, and a structural self-supervision loss keeps
//! the learned per-scale structure predictions honest. The crate also ships
//! the six-metric evaluation engine (MI, SF, AG, VIF, Qabf, SSIM) used to
//! score fused images against their sources.
//!
//! This crate is `no_std`-compatible (with `alloc`); decoding, file formats
//! and the batch CLI live in the companion `structfuse-cli` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod color;
pub mod error;
mod fmath;
pub mod imagedata;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod plane;
pub mod spf;
pub mod structmap;
pub mod tensor;

pub use error::{Error, Result};
pub use imagedata::ImagePair;
pub use plane::Plane;
pub use structmap::{Polarity, StructurePyramid};
pub use tensor::Tensor;
