//! Trains a small CNW model with modality dropout and evaluates it under the
//! three input conditions.
//!
//! cargo run --example train_and_evaluate -- [work_dir]

use std::path::PathBuf;

use bevfuse::experiment::{evaluate_checkpoint, generate, train, ExperimentConfig};

fn main() -> bevfuse::Result<()> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "train_small".into()));
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = work.join("data");
    cfg.synth.train = 300;
    cfg.synth.val = 50;
    cfg.train.epochs = 2;
    generate(&cfg, &cfg.dataset)?;

    let run = work.join("run");
    let summary = train(&cfg, &run, true)?;
    println!("final loss {:.4}", summary.last_loss.unwrap_or(f64::NAN));

    let report = evaluate_checkpoint(&summary.checkpoint, None, &run)?;
    println!("condition  mAP");
    for c in &report.conditions {
        println!("{:<9}  {:.4}", c.condition, c.map);
    }
    println!("summary    {:.4}", report.summary_map);
    Ok(())
}
