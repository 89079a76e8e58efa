//! On-disk dataset: `manifest.json` plus one binary record per scene under
//! `train/` and `val/`.
//!
//! A record is the little-endian `u64` scene id followed by the arrays listed
//! in the manifest, each as a `u64` element count and then the elements.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render_cameras, render_lidar, RigConfig, SensorParams};
use super::scene::{sample_scene, Scene, SceneBox, SceneParams};
use crate::detection::GroundTruthBox;
use crate::error::{Error, Result};
use crate::geometry::{BevGridSpec, CameraModel};
use crate::tensor::Tensor;

pub const FORMAT: &str = "bevfuse-synth";
pub const VERSION: u32 = 1;
const BOX_FIELDS: [&str; 8] = ["x", "y", "w", "l", "yaw", "class", "height", "appearance"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub train: usize,
    pub val: usize,
    pub scene: SceneParams,
    pub rig: RigConfig,
    pub sensors: SensorParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 2000,
            val: 300,
            scene: SceneParams::default(),
            rig: RigConfig::default(),
            sensors: SensorParams::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for r in [self.scene.validate(), self.rig.validate(), self.sensors.validate()] {
            if let Err(Error::Config(e)) = r {
                errs.extend(e);
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    /// Scene ids are unique across splits; each id seeds its own RNG stream.
    pub fn scene_id(self, index: usize) -> u64 {
        match self {
            Split::Train => index as u64,
            Split::Val => (1u64 << 32) | index as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub dtype: String,
    /// Dimensions; `0` marks the variable leading dimension of `boxes`.
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub val: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub grid: BevGridSpec,
    pub synth: SynthConfig,
    /// Full-resolution image cameras.
    pub cameras: Vec<CameraModel>,
    pub counts: Counts,
    pub arrays: Vec<ArraySpec>,
    /// Echo of the experiment config that requested the dataset, if any.
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Sensor renders of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSample {
    pub scene: Scene,
    /// `V` images `[h, w, 3]`.
    pub images: Vec<Tensor>,
    /// `[H_L, W_L, 2]`: occupancy and height.
    pub lidar: Tensor,
    /// Full-resolution cameras the images were rendered with.
    pub cams: Vec<CameraModel>,
}

/// Deterministic per-scene generator: the scene and its renders depend only
/// on `(seed, scene_id)`.
pub fn generate_sample(cfg: &SynthConfig, grid: &BevGridSpec, seed: u64, scene_id: u64) -> Result<RenderedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene_id);
    let scene = sample_scene(&mut rng, &cfg.scene, grid, scene_id)?;
    let cams = cfg.rig.cameras();
    let images = render_cameras(&scene, &cams, cfg.sensors.sigma_cam, &mut rng);
    let lidar = render_lidar(&scene, grid, &cfg.sensors, &mut rng);
    Ok(RenderedSample { scene, images, lidar, cams })
}

fn manifest_for(cfg: &SynthConfig, grid: &BevGridSpec, seed: u64, echo: serde_json::Value) -> Manifest {
    let r = &cfg.rig;
    Manifest {
        format: FORMAT.into(),
        version: VERSION,
        seed,
        grid: *grid,
        synth: cfg.clone(),
        cameras: r.cameras(),
        counts: Counts { train: cfg.train, val: cfg.val },
        arrays: vec![
            ArraySpec {
                name: "boxes".into(),
                dtype: "f64".into(),
                shape: vec![0, BOX_FIELDS.len()],
                fields: BOX_FIELDS.iter().map(|s| s.to_string()).collect(),
            },
            ArraySpec {
                name: "camera".into(),
                dtype: "f32".into(),
                shape: vec![r.views, r.image_h, r.image_w, 3],
                fields: Vec::new(),
            },
            ArraySpec {
                name: "lidar".into(),
                dtype: "f32".into(),
                shape: vec![cfg.sensors.lidar_h, cfg.sensors.lidar_w, 2],
                fields: Vec::new(),
            },
        ],
        config: echo,
    }
}

pub fn encode_record(sample: &RenderedSample) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&sample.scene.scene_id.to_le_bytes());
    let boxes: Vec<f64> = sample
        .scene
        .boxes
        .iter()
        .flat_map(|b| {
            [
                b.gt.center[0],
                b.gt.center[1],
                b.gt.size[0],
                b.gt.size[1],
                b.gt.yaw,
                b.gt.class_id as f64,
                b.height,
                b.appearance,
            ]
        })
        .collect();
    out.extend_from_slice(&(boxes.len() as u64).to_le_bytes());
    boxes.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    let cam: usize = sample.images.iter().map(Tensor::len).sum();
    out.extend_from_slice(&(cam as u64).to_le_bytes());
    for img in &sample.images {
        img.data().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes()));
    }
    out.extend_from_slice(&(sample.lidar.len() as u64).to_le_bytes());
    sample.lidar.data().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes()));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Data(format!("{}: record truncated at byte {}", self.path.display(), self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array(&mut self, name: &str, expected: Option<usize>, width: usize) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if let Some(e) = expected {
            if n != e {
                return Err(Error::Data(format!("{}: array {name} has {n} values, manifest says {e}", self.path.display())));
            }
        }
        let raw = self.take(n.checked_mul(width).ok_or_else(|| Error::Data("array length overflow".into()))?)?;
        Ok(if width == 8 {
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
        } else {
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect()
        })
    }
}

pub fn decode_record(bytes: &[u8], manifest: &Manifest, path: &Path) -> Result<RenderedSample> {
    let mut r = Reader { bytes, pos: 0, path };
    let scene_id = r.u64()?;
    let boxes = r.array("boxes", None, 8)?;
    if boxes.len() % BOX_FIELDS.len() != 0 {
        return Err(Error::Data(format!("{}: boxes array is not a multiple of {}", path.display(), BOX_FIELDS.len())));
    }
    let classes = manifest.synth.scene.classes();
    let mut scene_boxes = Vec::with_capacity(boxes.len() / 8);
    for b in boxes.chunks_exact(8) {
        let class_id = b[5] as usize;
        if b[5] != class_id as f64 || class_id >= classes || !(b[2] > 0.0 && b[3] > 0.0) {
            return Err(Error::Data(format!("{}: malformed box {b:?}", path.display())));
        }
        scene_boxes.push(SceneBox {
            gt: GroundTruthBox { center: [b[0], b[1]], size: [b[2], b[3]], yaw: b[4], class_id },
            height: b[6],
            appearance: b[7],
        });
    }
    let cam_shape = &manifest.arrays[1].shape;
    let lidar_shape = &manifest.arrays[2].shape;
    let cam = r.array("camera", Some(cam_shape.iter().product()), 4)?;
    let lidar = r.array("lidar", Some(lidar_shape.iter().product()), 4)?;
    if !boxes.iter().chain(&cam).chain(&lidar).all(|v| v.is_finite()) {
        return Err(Error::Data(format!("{}: non-finite values in record", path.display())));
    }
    if r.pos != bytes.len() {
        return Err(Error::Data(format!("{}: {} trailing bytes", path.display(), bytes.len() - r.pos)));
    }
    let per = cam_shape[1..].iter().product::<usize>();
    let images = cam
        .chunks_exact(per)
        .map(|c| Tensor::new(&cam_shape[1..], c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderedSample {
        scene: Scene { scene_id, boxes: scene_boxes },
        images,
        lidar: Tensor::new(lidar_shape, lidar)?,
        cams: manifest.cameras.clone(),
    })
}

fn record_path(dir: &Path, split: Split, index: usize) -> PathBuf {
    dir.join(split.dir()).join(format!("{index:06}.bin"))
}

/// Writes a dataset directory. Scenes are rendered in parallel on the current
/// rayon pool; the bytes do not depend on the number of threads.
pub fn write_dataset(
    dir: &Path,
    cfg: &SynthConfig,
    grid: &BevGridSpec,
    seed: u64,
    echo: serde_json::Value,
) -> Result<Manifest> {
    cfg.validate()?;
    grid.validate()?;
    let manifest = manifest_for(cfg, grid, seed, echo);
    for split in [Split::Train, Split::Val] {
        fs::create_dir_all(dir.join(split.dir()))?;
    }
    for (split, n) in [(Split::Train, cfg.train), (Split::Val, cfg.val)] {
        (0..n).into_par_iter().try_for_each(|i| -> Result<()> {
            let sample = generate_sample(cfg, grid, seed, split.scene_id(i))?;
            let mut f = fs::File::create(record_path(dir, split, i))?;
            f.write_all(&encode_record(&sample))?;
            Ok(())
        })?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// A dataset directory opened for reading; records are loaded on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported format {} v{}",
                path.display(),
                manifest.format,
                manifest.version
            )));
        }
        let names: Vec<&str> = manifest.arrays.iter().map(|a| a.name.as_str()).collect();
        if names != ["boxes", "camera", "lidar"] {
            return Err(Error::Data(format!("{}: unexpected array layout {names:?}", path.display())));
        }
        Ok(Dataset { dir: dir.to_path_buf(), manifest })
    }

    pub fn len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.manifest.counts.train,
            Split::Val => self.manifest.counts.val,
        }
    }

    pub fn load(&self, split: Split, index: usize) -> Result<RenderedSample> {
        if index >= self.len(split) {
            return Err(Error::Data(format!("{} index {index} out of range", split.dir())));
        }
        let path = record_path(&self.dir, split, index);
        let bytes = fs::read(&path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        decode_record(&bytes, &self.manifest, &path)
    }
}
