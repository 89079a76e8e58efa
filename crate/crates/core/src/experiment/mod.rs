//! Experiment driver behind the `bevfuse` commands: dataset generation,
//! training, evaluation, ablation sweeps and inspection dumps.

mod ablate;
mod config;
mod evaluate;
mod inspect;
mod train;

use std::path::Path;

pub use ablate::{ablate, AblationRow, AblationTable, Axis, P_L_SWEEP};
pub use config::{EvalConfig, ExperimentConfig, Overrides, TrainConfig};
pub use evaluate::{check_params, evaluate_checkpoint, evaluate_conditions, write_predictions, CONDITIONS};
pub use inspect::{channel_variance, inspect, to_pgm, weights_csv, InspectOutput};
pub use train::{
    build_model, epoch_order, lr_at, step_mask, train, train_until, RunState, TrainSummary, CHECKPOINT_FILE, LOG_FILE,
};

use crate::error::Result;
use crate::synth::{write_dataset, Manifest};

/// Renders the dataset described by `cfg` into `out`.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    write_dataset(out, &cfg.synth, &cfg.grid, cfg.seed, cfg.to_json_value())
}
