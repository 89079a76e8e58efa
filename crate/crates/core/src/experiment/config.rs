use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bev::QueryMode;
use crate::error::{Error, Result};
use crate::fusion::{FusionKind, MdConfig};
use crate::geometry::BevGridSpec;
use crate::model::ModelConfig;
use crate::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Scenes per optimizer step.
    pub batch: usize,
    pub lr: f64,
    /// Cosine decay from `lr` down to `lr · lr_final`.
    pub lr_final: f64,
    /// Clip the global gradient norm; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch: 1,
            lr: 1e-3,
            lr_final: 0.1,
            grad_clip: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate only the first scenes of the validation split.
    pub max_scenes: Option<usize>,
}

/// Everything a run depends on. Serialized verbatim into every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Dataset directory read by `train`, `eval`, `ablate` and `inspect`.
    pub dataset: PathBuf,
    /// BEV grid of the model; its extent is also the scene and LiDAR extent.
    pub grid: BevGridSpec,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub md: MdConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            dataset: PathBuf::from("data/synth"),
            grid: BevGridSpec {
                h: 16,
                w: 16,
                d: 4,
                extent: (-16.0, 16.0, -16.0, 16.0),
                z_range: (0.0, 2.4),
            },
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            md: MdConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line overrides; flags win over the file, which wins over defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub fusion: Option<FusionKind>,
    pub p_md: Option<f64>,
    pub p_l: Option<f64>,
    pub queries: Option<QueryMode>,
    pub dataset: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads a JSON config; missing fields take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read config {}: {e}", path.display())]))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(v) => Error::Config(v.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(f) = o.fusion {
            self.model.fusion = f;
        }
        if let Some(p) = o.p_md {
            self.md.p_md = p;
        }
        if let Some(p) = o.p_l {
            self.md.p_l = p;
        }
        if let Some(q) = o.queries {
            self.model.queries = q;
        }
        if let Some(d) = &o.dataset {
            self.dataset = d.clone();
        }
    }

    /// Checks every section and reports all offending fields at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut collect = |r: Result<()>| {
            if let Err(e) = r {
                match e {
                    Error::Config(v) => errs.extend(v),
                    other => errs.push(other.to_string()),
                }
            }
        };
        collect(self.grid.validate());
        collect(self.synth.validate());
        collect(self.model.validate(self.synth.scene.classes()));
        collect(self.md.validate());
        let t = &self.train;
        if t.batch == 0 {
            errs.push("train.batch must be >= 1".into());
        }
        if !(t.lr > 0.0) || !(0.0..=1.0).contains(&t.lr_final) {
            errs.push(format!("train.lr {} must be positive and train.lr_final {} in [0, 1]", t.lr, t.lr_final));
        }
        if !(t.grad_clip >= 0.0) {
            errs.push("train.grad_clip must be non-negative".into());
        }
        if self.eval.max_scenes == Some(0) {
            errs.push("eval.max_scenes must be positive when set".into());
        }
        if self.model.n_obj < self.synth.scene.n_boxes.1 {
            errs.push(format!(
                "model.n_obj {} is smaller than the largest scene ({} boxes)",
                self.model.n_obj, self.synth.scene.n_boxes.1
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Single-line JSON used in checkpoint metadata and file headers.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Same run apart from the epoch budget, so a checkpoint can be resumed.
    pub fn resumable_from(&self, other: &ExperimentConfig) -> bool {
        let mut a = self.clone();
        a.train.epochs = other.train.epochs;
        a.eval = other.eval.clone();
        a == *other
    }
}
