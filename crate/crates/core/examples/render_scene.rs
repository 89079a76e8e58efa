//! Samples one synthetic scene, renders both sensors and writes the camera
//! views and LiDAR occupancy as PGM images.
//!
//! cargo run --example render_scene -- [out_dir] [seed]

use std::path::PathBuf;

use bevfuse::experiment::{to_pgm, ExperimentConfig};
use bevfuse::synth::generate_sample;

fn main() -> bevfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "render_scene".into()));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));
    let cfg = ExperimentConfig::default();
    let sample = generate_sample(&cfg.synth, &cfg.grid, seed, 0)?;
    std::fs::create_dir_all(&out)?;

    println!("scene {} with {} boxes", sample.scene.scene_id, sample.scene.boxes.len());
    for b in &sample.scene.boxes {
        let g = &b.gt;
        println!(
            "  class {} at ({:6.2}, {:6.2}) size {:.2}x{:.2} yaw {:+.2} height {:.2}",
            g.class_id, g.center[0], g.center[1], g.size[0], g.size[1], g.yaw, b.height
        );
    }
    for (v, img) in sample.images.iter().enumerate() {
        let s = img.shape();
        // Luminance of the RGB image.
        let lum: Vec<f64> = img.data().chunks(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
        std::fs::write(out.join(format!("camera_{v}.pgm")), to_pgm(&lum, s[0], s[1], &[]))?;
    }
    let s = sample.lidar.shape();
    let occ: Vec<f64> = sample.lidar.data().chunks(s[2]).map(|c| c[0]).collect();
    std::fs::write(out.join("lidar_occupancy.pgm"), to_pgm(&occ, s[0], s[1], &[]))?;
    println!("wrote {} camera views and the LiDAR grid to {}", sample.images.len(), out.display());
    Ok(())
}
