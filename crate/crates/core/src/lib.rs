//! 3D Winograd convolution engine with low-rank adaptation and
//! column-sparse inference.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`rng`], [`io`], [`parallel`]: dense storage, deterministic
//!   randomness, `.lrt` tensor files, thread helpers.
//! - [`transform`]: the F(2³, 3³) transform family — base matrices, the
//!   rotation-based nested 3D transforms, their flattened 2D equivalents,
//!   and input tiling/reassembly.
//! - [`refconv`]: reference direct and im2col 3D convolutions (the oracles
//!   everything else is checked against).
//! - [`layer`]: the Winograd convolution layer — dense, low-rank-adapted,
//!   masked, and compact column-sparse forward paths, plus backward.
//! - [`lowrank`]: Jacobi SVD, low-rank factor initialization, spectrum
//!   reports.
//! - [`pruning`]: Winograd-domain column saliency scores, mask construction,
//!   and the two-stage prune/retrain pipeline.
//! - [`trainer`]: synthetic moving-blob dataset and a small 3D convnet
//!   trained end-to-end in spatial, Winograd-dense, or low-rank mode.
//! - [`bench`]: timed strategy comparison (im2col / Winograd / sparse) with
//!   pre-timing equivalence validation.
//! - [`model_io`]: `.lrw` model files.
//! - [`cli`]: the `wino3d` command-line tool.

pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod layer;
pub mod lowrank;
pub mod model_io;
pub mod parallel;
pub mod pruning;
pub mod refconv;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};
