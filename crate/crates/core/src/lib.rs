//! Continual unsupervised monocular depth estimation on a tape-based autodiff.
//!
//! The crate is `no_std` (it needs `alloc`). Enable the `std` feature to get
//! runtime SIMD detection in the matrix kernels; file formats, the experiment
//! driver and the command line live in the `depthcl` companion crate.
//!
//! Layout:
//! - [`tensor`]: dense tensors, the reverse-mode tape, Adam and a
//!   finite-difference gradient checker.
//! - [`geometry`]: pinhole intrinsics, axis-angle poses, pixel reprojection
//!   and differentiable view synthesis.
//! - [`networks`]: the depth and ego-motion networks.
//! - [`losses`]: SSIM/L1 photometric error, automasking, edge-aware
//!   smoothness and the per-sample depth loss.
//! - [`continual`]: reservoir replay, EMA context model, cropped
//!   spatiotemporal consistency loss and the training step for every method.
//! - [`metrics`]: depth metrics and the task-wise performance matrix.
//! - [`synth`]: layered-plane video generator with exact depth and motion.
//! - [`experiment`]: the task-sequential training and evaluation loop.
#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod continual;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod real;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Tape, Tensor, Var};
