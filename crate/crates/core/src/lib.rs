//! Stereo-aware inpainting behind objects.
//!
//! The crate covers the whole pipeline: a small reverse-mode autodiff engine
//! ([`tensor`]), classical image operations ([`imageproc`]), mask-bank
//! harvesting from depth discontinuities ([`maskbank`]), stereo-aware training
//! sample synthesis ([`datagen`]), the partial-convolution UNet
//! ([`network`]), training objectives ([`losses`]), evaluation ([`metrics`]),
//! file formats ([`dataio`]) and the batch commands driving them
//! ([`pipeline`]).

pub mod config;
pub mod datagen;
pub mod dataio;
pub mod error;
pub mod image;
pub mod imageproc;
pub mod losses;
pub mod maskbank;
pub mod metrics;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use image::{BinaryMask, DisparityMap, ImageBuffer};
pub use tensor::Tensor;
