//! Writes a small train/val dataset and reads it back.
//!
//! cargo run --example generate_dataset -- [out_dir]

use std::path::PathBuf;

use bevfuse::experiment::{generate, ExperimentConfig};
use bevfuse::synth::{Dataset, Split};

fn main() -> bevfuse::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_small".into()));
    let mut cfg = ExperimentConfig::default();
    cfg.synth.train = 100;
    cfg.synth.val = 20;
    let manifest = generate(&cfg, &out)?;
    println!("{} train / {} val scenes in {}", manifest.counts.train, manifest.counts.val, out.display());

    let ds = Dataset::open(&out)?;
    let mut per_class = vec![0usize; cfg.synth.scene.classes()];
    for i in 0..ds.len(Split::Train) {
        for b in &ds.load(Split::Train, i)?.scene.boxes {
            per_class[b.gt.class_id] += 1;
        }
    }
    let total: usize = per_class.iter().sum();
    for (c, n) in per_class.iter().enumerate() {
        println!("class {c}: {n} boxes ({:.1}%)", 100.0 * *n as f64 / total as f64);
    }
    Ok(())
}
