#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};

use bevfuse::experiment::ExperimentConfig;
use bevfuse::fusion::ModalityMask;
use bevfuse::geometry::BevGridSpec;
use bevfuse::synth::generate_sample;
use bevfuse::tensor::gradcheck::{self, GradCheckReport};

/// H=W=4, N=8, V=2, D=2, n_obj=3 with 8×12 images and an 8×8 LiDAR grid.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.grid = BevGridSpec { h: 4, w: 4, d: 2, extent: (-8.0, 8.0, -8.0, 8.0), z_range: (0.2, 1.8) };
    c.synth.train = 6;
    c.synth.val = 4;
    c.synth.scene.n_boxes = (1, 3);
    c.synth.rig.views = 2;
    c.synth.rig.image_h = 8;
    c.synth.rig.image_w = 12;
    c.synth.rig.fx = 6.0;
    c.synth.rig.fy = 6.0;
    c.synth.sensors.lidar_h = 8;
    c.synth.sensors.lidar_w = 8;
    let m = &mut c.model;
    m.channels = 8;
    m.heads = 2;
    m.points = 2;
    m.encoder_layers = 1;
    m.decoder_layers = 1;
    m.n_obj = 3;
    m.ffn_hidden = 8;
    m.feature_channels = 4;
    m.cam_hidden = 4;
    m.lidar_hidden = 4;
    c.train.epochs = 1;
    c
}

/// Finite-difference check of backbones → encoders → fusion → decoder → loss.
pub fn pipeline_gradcheck(cfg: &ExperimentConfig, mask: ModalityMask, seed: u64) -> GradCheckReport {
    let model = bevfuse::experiment::build_model(cfg, None).unwrap();
    let mut store = model.init(seed).unwrap();
    // Move CNW off its symmetric start so the weight gradients are non-trivial.
    for name in [bevfuse::fusion::CNW_CAM, bevfuse::fusion::CNW_LIDAR] {
        if let Some(t) = store.get_mut(name) {
            t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += 0.1 * (i % 3) as f64 - 0.1);
        }
    }
    // Initial offsets land on cell centers, where bilinear sampling has kinks.
    let offsets: Vec<String> = store.names().filter(|n| n.contains("offset_proj.bias")).cloned().collect();
    for name in offsets {
        let t = store.get_mut(&name).unwrap();
        t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += 0.013 * (i + 1) as f64);
    }
    let sample = generate_sample(&cfg.synth, &cfg.grid, seed, 0).unwrap();
    gradcheck::check_with_params(&store, &[], 1e-6, Some(6), |bind, _| Ok(model.loss(bind, &sample, mask)?.loss))
        .unwrap()
}

/// Scratch directory under the cargo target dir, emptied first.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
