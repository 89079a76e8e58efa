//! Runs one ablation axis (fusion, md or queries) on a small dataset and
//! prints the table.
//!
//! cargo run --example ablation_sweep -- [axis] [work_dir]

use std::path::PathBuf;

use bevfuse::experiment::{ablate, generate, Axis, ExperimentConfig};

fn main() -> bevfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let axis: Axis = args.next().unwrap_or_else(|| "fusion".into()).parse().expect("axis");
    let work = PathBuf::from(args.next().unwrap_or_else(|| "ablate_small".into()));
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = work.join("data");
    cfg.synth.train = 200;
    cfg.synth.val = 40;
    cfg.train.epochs = 1;
    if !cfg.dataset.join("manifest.json").exists() {
        generate(&cfg, &cfg.dataset)?;
    }
    let table = ablate(&cfg, axis, &work, false)?;
    println!("{:<10} {:>7} {:>7} {:>7} {:>7}", "variant", "L+C", "L", "C", "summary");
    for r in &table.rows {
        println!("{:<10} {:>7.4} {:>7.4} {:>7.4} {:>7.4}", r.variant, r.map_lc, r.map_l, r.map_c, r.summary);
    }
    Ok(())
}
