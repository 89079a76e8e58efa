//! Multi-modal bird's-eye-view object detection with uniform
//! deformable-attention encoders, channel-normalized fusion and
//! modality dropout, built on a small reverse-mode autodiff engine.

pub mod bev;
pub mod checkpoint;
pub mod deform_attn;
pub mod detection;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
