use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fusion::{sample_modality_mask, ModalityMask};
use crate::model::{Model, SensorLayout};
use crate::synth::{Dataset, Manifest, Split};
use crate::tensor::{Adam, AdamConfig, Binder, ParamStore, Tape, Tensor};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.csv";

// RNG stream tags; scene streams stay below 2^33.
const SHUFFLE_STREAM: u64 = 1 << 48;
const MASK_STREAM: u64 = 2 << 48;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Training scene order of one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, SHUFFLE_STREAM | epoch as u64));
    order
}

/// Modality mask drawn for optimizer step `step`.
pub fn step_mask(cfg: &ExperimentConfig, step: u64) -> ModalityMask {
    sample_modality_mask(&cfg.md, &mut rng_for(cfg.seed, MASK_STREAM | step))
}

pub fn lr_at(cfg: &ExperimentConfig, step: u64, total: u64) -> f64 {
    let t = &cfg.train;
    let frac = if total == 0 { 0.0 } else { step as f64 / total as f64 };
    t.lr * (t.lr_final + (1.0 - t.lr_final) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Builds the model described by `cfg` and checks it against a dataset.
pub fn build_model(cfg: &ExperimentConfig, manifest: Option<&Manifest>) -> Result<Model> {
    cfg.validate()?;
    let layout = SensorLayout {
        cameras: cfg.synth.rig.cameras(),
        lidar_h: cfg.synth.sensors.lidar_h,
        lidar_w: cfg.synth.sensors.lidar_w,
        extent: cfg.grid.extent,
    };
    let model = Model::new(cfg.model.clone(), cfg.grid, layout, cfg.synth.scene.classes())?;
    if let Some(m) = manifest {
        model.check_dataset(m)?;
    }
    Ok(model)
}

/// A training run on disk: config, parameters, optimizer state and step.
pub struct RunState {
    pub config: ExperimentConfig,
    pub store: ParamStore,
    pub adam: Adam,
    pub step: u64,
}

const OPT_M: &str = "optim.m.";
const OPT_V: &str = "optim.v.";

impl RunState {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.insert("config".into(), self.config.to_json_line());
        ck.meta.insert("seed".into(), self.config.seed.to_string());
        ck.meta.insert("step".into(), self.step.to_string());
        ck.meta.insert("optim.step".into(), self.adam.step.to_string());
        for (name, t) in self.store.iter() {
            ck.tensors.insert(name.clone(), t.clone());
            for (prefix, moments) in [(OPT_M, &self.adam.first), (OPT_V, &self.adam.second)] {
                if let Some(m) = moments.get(name) {
                    ck.tensors.insert(format!("{prefix}{name}"), Tensor::new(t.shape(), m.clone()).expect("moment shape"));
                }
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let meta = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Data(format!("checkpoint is missing meta {k}")))
        };
        let config = ExperimentConfig::from_json(&meta("config")?)
            .map_err(|e| Error::Data(format!("checkpoint config: {e}")))?;
        let num = |k: &str| -> Result<u64> {
            meta(k)?.parse().map_err(|_| Error::Data(format!("checkpoint meta {k} is not an integer")))
        };
        let step = num("step")?;
        let mut adam = Adam::new(AdamConfig { lr: config.train.lr, ..Default::default() });
        adam.step = num("optim.step")?;
        let mut store = ParamStore::new();
        for (name, t) in ck.tensors {
            if let Some(p) = name.strip_prefix(OPT_M) {
                adam.first.insert(p.to_string(), t.into_data());
            } else if let Some(p) = name.strip_prefix(OPT_V) {
                adam.second.insert(p.to_string(), t.into_data());
            } else {
                store.insert(name, t)?;
            }
        }
        Ok(RunState { config, store, adam, step })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    /// Step the run started from (non-zero when resumed).
    pub start_step: u64,
    /// Step count reached when training returned.
    pub steps: u64,
    pub last_loss: Option<f64>,
}

fn log_header(cfg: &ExperimentConfig) -> String {
    format!("# seed {}\n# config {}\niter,loss,mask\n", cfg.seed, cfg.to_json_line())
}

/// The header plus the rows of an existing log that precede `step`.
fn truncate_log(path: &Path, cfg: &ExperimentConfig, step: u64) -> Result<String> {
    let mut out = log_header(cfg);
    if let (true, Ok(text)) = (step > 0, fs::read_to_string(path)) {
        for line in text.lines().skip(3) {
            let it: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
            if it.is_some_and(|i| i < step) {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

fn add_into(acc: &mut BTreeMap<String, Vec<f64>>, g: BTreeMap<String, Vec<f64>>) {
    for (k, v) in g {
        match acc.get_mut(&k) {
            Some(a) => a.iter_mut().zip(&v).for_each(|(x, y)| *x += y),
            None => {
                acc.insert(k, v);
            }
        }
    }
}

/// Trains on `cfg.dataset`, writing `checkpoint.bin` and `train_log.csv`
/// into `out`. An existing checkpoint from the same run is resumed.
pub fn train(cfg: &ExperimentConfig, out: &Path, verbose: bool) -> Result<TrainSummary> {
    train_until(cfg, out, verbose, None)
}

/// Like [`train`], but stops (with a checkpoint) once `stop` steps are done.
pub fn train_until(cfg: &ExperimentConfig, out: &Path, verbose: bool, stop: Option<u64>) -> Result<TrainSummary> {
    let ds = Dataset::open(&cfg.dataset)?;
    let model = build_model(cfg, Some(&ds.manifest))?;
    fs::create_dir_all(out)?;
    let ck_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(LOG_FILE);

    let mut state = if ck_path.exists() {
        let prev = RunState::load(&ck_path)?;
        if !cfg.resumable_from(&prev.config) {
            return Err(Error::Config(vec![format!(
                "{} holds a run with a different config; use a fresh --out",
                ck_path.display()
            )]));
        }
        RunState { config: cfg.clone(), ..prev }
    } else {
        RunState {
            config: cfg.clone(),
            store: model.init(cfg.seed)?,
            adam: Adam::new(AdamConfig { lr: cfg.train.lr, ..Default::default() }),
            step: 0,
        }
    };
    let n = ds.len(Split::Train);
    let b = cfg.train.batch;
    let per_epoch = n.div_ceil(b) as u64;
    let total = per_epoch * cfg.train.epochs as u64;
    let start = state.step;
    if start > total {
        return Err(Error::Config(vec![format!(
            "checkpoint is at step {start}, past the {total} steps of train.epochs = {}",
            cfg.train.epochs
        )]));
    }
    if n == 0 && total > 0 {
        return Err(Error::Data("training split is empty".into()));
    }

    fs::write(&log_path, truncate_log(&log_path, cfg, start)?)?;
    let mut log = fs::OpenOptions::new().append(true).open(&log_path)?;

    let mut order: Option<(usize, Vec<usize>)> = None;
    let mut last_loss = None;
    let mut window = Vec::new();
    let end = stop.map_or(total, |s| s.clamp(start, total));
    for step in start..end {
        let epoch = (step / per_epoch) as usize;
        let within = (step % per_epoch) as usize;
        if order.as_ref().map_or(true, |(e, _)| *e != epoch) {
            order = Some((epoch, epoch_order(cfg.seed, epoch, n)));
        }
        let idx = &order.as_ref().expect("order").1[within * b..((within + 1) * b).min(n)];
        let mask = step_mask(cfg, step);
        let store = &state.store;
        let results = idx
            .par_iter()
            .map(|&i| {
                let sample = ds.load(Split::Train, i)?;
                let tape = Tape::new();
                let bind = Binder::trainable(store, &tape);
                let l = model.loss(&bind, &sample, mask)?;
                let value = l.loss.item();
                if !value.is_finite() {
                    return Err(Error::NumericInput { op: "train" });
                }
                let mut g = tape.backward(l.loss)?;
                Ok((value, bind.collect_grads(&mut g)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grads = BTreeMap::new();
        let mut loss = 0.0;
        for (l, g) in results {
            loss += l;
            add_into(&mut grads, g);
        }
        let inv = 1.0 / idx.len() as f64;
        loss *= inv;
        let norm = grads.values().flatten().map(|g| (g * inv) * (g * inv)).sum::<f64>().sqrt();
        let scale = if cfg.train.grad_clip > 0.0 && norm > cfg.train.grad_clip {
            inv * cfg.train.grad_clip / norm
        } else {
            inv
        };
        grads.values_mut().flatten().for_each(|g| *g *= scale);
        state.adam.config.lr = lr_at(cfg, step, total);
        state.adam.step(&mut state.store, grads)?;
        state.step = step + 1;
        writeln!(log, "{step},{loss},{}", mask.label())?;
        last_loss = Some(loss);
        if verbose {
            window.push(loss);
            if window.len() == 200 || state.step % per_epoch == 0 {
                eprintln!(
                    "epoch {} step {}/{} loss {:.4}",
                    epoch + 1,
                    state.step,
                    total,
                    window.iter().sum::<f64>() / window.len() as f64
                );
                window.clear();
            }
        }
        if state.step % per_epoch == 0 {
            log.flush()?;
            state.to_checkpoint().save(&ck_path)?;
        }
    }
    log.flush()?;
    state.to_checkpoint().save(&ck_path)?;
    Ok(TrainSummary {
        checkpoint: ck_path,
        log: log_path,
        start_step: start,
        steps: end,
        last_loss,
    })
}
