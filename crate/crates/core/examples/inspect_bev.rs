//! Writes per-modality BEV variance maps and the CNW channel weights of a
//! checkpoint.
//!
//! cargo run --example inspect_bev -- <checkpoint> [scene] [out_dir]

use std::path::PathBuf;

use bevfuse::experiment::inspect;

fn main() -> bevfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(ck) = args.next() else {
        eprintln!("usage: inspect_bev <checkpoint> [scene] [out_dir]");
        std::process::exit(2);
    };
    let scene: usize = args.next().map_or(0, |s| s.parse().expect("scene index"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "inspect".into()));
    let o = inspect(&PathBuf::from(ck), None, scene, &out)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("camera BEV variance: mean {:.4} -> {}", mean(&o.cam_variance), o.cam_pgm.display());
    println!("LiDAR BEV variance:  mean {:.4} -> {}", mean(&o.lidar_variance), o.lidar_pgm.display());
    match (o.weights_csv, o.notice) {
        (Some(p), _) => println!("channel weights -> {}", p.display()),
        (None, Some(n)) => println!("{n}"),
        _ => {}
    }
    Ok(())
}
