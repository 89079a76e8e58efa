//! Prints the default experiment config as JSON. `configs/default.json` is
//! this output.

use bevfuse::experiment::ExperimentConfig;

fn main() {
    let cfg = ExperimentConfig::default();
    cfg.validate().expect("defaults validate");
    println!("{}", serde_json::to_string_pretty(&cfg).unwrap());
}
