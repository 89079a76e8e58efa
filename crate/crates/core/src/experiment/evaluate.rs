use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::train::{build_model, RunState};
use crate::detection::PredictionRecord;
use crate::error::{Error, Result};
use crate::eval::{EvalScene, MetricsReport};
use crate::fusion::ModalityMask;
use crate::model::Model;
use crate::synth::{Dataset, Split};
use crate::tensor::ParamStore;

pub const CONDITIONS: [ModalityMask; 3] = [ModalityMask::BOTH, ModalityMask::LIDAR_ONLY, ModalityMask::CAMERA_ONLY];

/// Runs the same weights on every validation scene under each of the masks
/// both, LiDAR-only and camera-only.
pub fn evaluate_conditions(
    model: &Model,
    store: &ParamStore,
    ds: &Dataset,
    max_scenes: Option<usize>,
) -> Result<Vec<(ModalityMask, Vec<EvalScene>)>> {
    model.check_dataset(&ds.manifest)?;
    let n = max_scenes.map_or(ds.len(Split::Val), |m| m.min(ds.len(Split::Val)));
    let per_scene = (0..n)
        .into_par_iter()
        .map(|i| {
            let sample = ds.load(Split::Val, i)?;
            let gts = sample.scene.ground_truth();
            CONDITIONS
                .iter()
                .map(|&mask| {
                    Ok(EvalScene {
                        scene_id: sample.scene.scene_id,
                        preds: model.predict(store, &sample, mask)?,
                        gts: gts.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CONDITIONS
        .iter()
        .enumerate()
        .map(|(c, &mask)| (mask, per_scene.iter().map(|s| s[c].clone()).collect()))
        .collect())
}

/// Fails unless `store` has exactly the parameters `model` expects.
pub fn check_params(model: &Model, store: &ParamStore) -> Result<()> {
    let want = model.init(0)?;
    for (name, t) in want.iter() {
        match store.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => {
                return Err(Error::Data(format!("checkpoint {name} has shape {:?}, model needs {:?}", p.shape(), t.shape())))
            }
            None => return Err(Error::Data(format!("checkpoint lacks parameter {name}"))),
        }
    }
    if let Some(extra) = store.names().find(|n| !want.contains(n)) {
        return Err(Error::Data(format!("checkpoint has unknown parameter {extra}")));
    }
    Ok(())
}

/// Writes one JSON line per scene; the first line echoes seed and config.
pub fn write_predictions(path: &Path, scenes: &[EvalScene], cfg: &ExperimentConfig) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{}", serde_json::json!({ "seed": cfg.seed, "config": cfg.to_json_value() }))?;
    for s in scenes {
        let rec = PredictionRecord { scene_id: s.scene_id, boxes: s.preds.clone() };
        writeln!(f, "{}", serde_json::to_string(&rec)?)?;
    }
    f.flush()?;
    Ok(())
}

/// Evaluates a checkpoint: `metrics.json`, `metrics.csv` and one
/// `predictions_<condition>.jsonl` per mask go to `out`.
pub fn evaluate_checkpoint(checkpoint: &Path, dataset: Option<&Path>, out: &Path) -> Result<MetricsReport> {
    let state = RunState::load(checkpoint)?;
    let mut cfg = state.config.clone();
    if let Some(d) = dataset {
        cfg.dataset = d.to_path_buf();
    }
    let ds = Dataset::open(&cfg.dataset)?;
    let model = build_model(&cfg, Some(&ds.manifest))?;
    check_params(&model, &state.store)?;
    let per = evaluate_conditions(&model, &state.store, &ds, cfg.eval.max_scenes)?;
    let report = MetricsReport::from_conditions(&per, model.classes, cfg.seed, cfg.to_json_value())?;
    report.write(out)?;
    for (mask, scenes) in &per {
        write_predictions(&out.join(format!("predictions_{}.jsonl", mask.label())), scenes, &cfg)?;
    }
    Ok(report)
}
