//! Synthetic scenes with engineered sensor complementarity: cameras see class
//! (color) but only coarse position, the LiDAR grid sees precise geometry but
//! no class, and loses returns with range.

mod backbone;
mod dataset;
mod render;
mod scene;

pub use backbone::Backbone;
pub use dataset::{
    decode_record, encode_record, generate_sample, write_dataset, ArraySpec, Counts, Dataset, Manifest,
    RenderedSample, Split, SynthConfig, FORMAT, VERSION,
};
pub use render::{render_cameras, render_lidar, RigConfig, SensorParams};
pub use scene::{sample_scene, Scene, SceneBox, SceneParams, SizeRange};
