//! Core library for single-image novel view synthesis on synthetic
//! scenes: a minimal autodiff tensor engine, camera geometry, forward
//! splatting, set-attention blocks, the dual-renderer model, losses,
//! a procedural scene generator and evaluation metrics.

pub mod error;
pub mod ops;
pub mod scalar;
pub mod shape;
pub mod tape;
pub mod tensor;

pub mod blocks;
pub mod camera;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod scenes;
pub mod warp;

pub use scalar::Scalar;
pub use tape::Tape;
pub use tensor::Tensor;
