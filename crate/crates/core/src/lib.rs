//! Point transformer networks for 3D point sets, written without a tensor
//! framework.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: exact kNN (bounded max-heap), farthest point sampling and
//!   inverse-distance interpolation.
//! * [`nn`]: dense grids, linear maps, normalisation, softmax and pooling with
//!   hand-written backward passes, SGD with momentum, a finite-difference
//!   gradient checker and the checkpoint format.
//! * [`attention`]: the vector self-attention layer with relative position
//!   encoding and its ablation variants.
//! * [`network`]: residual blocks, transitions and the segmentation and
//!   classification backbones.
//! * [`harness`]: synthetic scenes, loss, metrics, training, the gradient
//!   suite and the kNN benchmark.
//! * [`config`]: the TOML run configuration shared by the CLI and harness.

pub mod attention;
pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod network;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
