//! Per-modality BEV encoders built from shared queries.
//!
//! Both modalities go through [`BevEncoder::encode`]: every reference point of
//! every pillar level is projected into every sensor view, and each
//! `(view, level)` pair becomes one cross-attention source. A camera view uses
//! the pinhole projection; the LiDAR grid uses the affine grid map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deform_attn::{AttnSource, EncoderLayer, EncoderLayerConfig};
use crate::error::{Error, Result};
use crate::geometry::{project_to_lidar, CameraModel, ReferenceGrid};
use crate::tensor::{Binder, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Camera,
    Lidar,
}

impl Modality {
    pub fn short(self) -> &'static str {
        match self {
            Modality::Camera => "cam",
            Modality::Lidar => "lidar",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    #[default]
    Shared,
    Separate,
}

impl QueryMode {
    pub fn name(self) -> &'static str {
        match self {
            QueryMode::Shared => "shared",
            QueryMode::Separate => "separate",
        }
    }
}

impl std::str::FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "shared" => Ok(QueryMode::Shared),
            "separate" => Ok(QueryMode::Separate),
            _ => Err(format!("unknown query mode '{s}' (expected shared or separate)")),
        }
    }
}

/// The learnable BEV queries, `[H·W, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BevQueries {
    pub mode: QueryMode,
    pub cells: usize,
    pub channels: usize,
}

impl BevQueries {
    pub fn param_name(&self, modality: Modality) -> String {
        match self.mode {
            QueryMode::Shared => "queries.shared".to_string(),
            QueryMode::Separate => format!("queries.{}", modality.short()),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let mut names = vec![self.param_name(Modality::Camera), self.param_name(Modality::Lidar)];
        names.dedup();
        for name in names {
            store.insert(name, Tensor::from_fn(&[self.cells, self.channels], |_| rng.gen_range(-1.0..1.0)))?;
        }
        Ok(())
    }

    pub fn get<'t>(&self, bind: &Binder<'_, 't>, modality: Modality) -> Result<Var<'t>> {
        bind.get(&self.param_name(modality))
    }
}

/// How reference points land on a sensor feature map.
#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    /// Pinhole camera already scaled to the feature map resolution.
    Camera(CameraModel),
    /// A grid covering the BEV extent (the LiDAR map).
    Grid,
}

/// One sensor feature map `[H_f, W_f, C]` and its projection.
#[derive(Clone, Debug)]
pub struct SensorView<'t> {
    pub features: Var<'t>,
    pub projection: Projection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevEncoderConfig {
    pub channels: usize,
    pub source_channels: usize,
    pub heads: usize,
    pub points: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    /// Initial offset spacing of self-attention points, in BEV cells.
    pub self_spread: f64,
    /// Initial offset spacing of cross-attention points, in feature cells.
    pub cross_spread: f64,
    /// Divide the cross-attention sum by the number of sources that see each cell.
    pub normalize_hits: bool,
}

/// A stack of encoder layers for one modality.
#[derive(Clone, Debug)]
pub struct BevEncoder {
    pub modality: Modality,
    pub config: BevEncoderConfig,
    pub layers: Vec<EncoderLayer>,
    pub refs: ReferenceGrid,
}

impl BevEncoder {
    /// Layers are named `{prefix}.layer{i}`.
    pub fn new(prefix: &str, modality: Modality, config: BevEncoderConfig, refs: ReferenceGrid) -> Self {
        let lc = EncoderLayerConfig {
            channels: config.channels,
            source_channels: config.source_channels,
            heads: config.heads,
            points: config.points,
            ffn_hidden: config.ffn_hidden,
        };
        let layers = (0..config.layers)
            .map(|i| EncoderLayer::new(format!("{prefix}.layer{i}"), lc))
            .collect();
        BevEncoder {
            modality,
            config,
            layers,
            refs,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for layer in &self.layers {
            layer.init(store, rng, self.config.self_spread, self.config.cross_spread)?;
        }
        Ok(())
    }

    /// One attention source per `(view, level)`, views outer.
    pub fn sources<'t>(&self, views: &[SensorView<'t>]) -> Result<Vec<AttnSource<'t>>> {
        let spec = self.refs.spec;
        let cells = spec.h * spec.w;
        let mut out = Vec::with_capacity(views.len() * spec.d);
        for view in views {
            let fs = view.features.shape();
            if fs.len() != 3 {
                return Err(Error::dim("bev_encoder", &fs, &[0, 0, self.config.source_channels]));
            }
            let (refs, valid): (Vec<[f64; 2]>, Vec<bool>) = match &view.projection {
                Projection::Camera(cam) => {
                    if cam.image_h != fs[0] || cam.image_w != fs[1] {
                        return Err(Error::dim("bev_encoder", &fs[..2], &[cam.image_h, cam.image_w]));
                    }
                    let p = cam.project_grid(&self.refs);
                    (p.uv.iter().map(|&[u, v]| [v, u]).collect(), p.visible)
                }
                Projection::Grid => (project_to_lidar(&self.refs, fs[0], fs[1]), vec![true; self.refs.points.len()]),
            };
            for z in 0..spec.d {
                let r = z * cells..(z + 1) * cells;
                out.push(AttnSource {
                    features: view.features,
                    refs: refs[r.clone()].to_vec(),
                    valid: valid[r].to_vec(),
                });
            }
        }
        Ok(out)
    }

    /// Runs every layer over `queries: [H·W, N]`, returning `[H·W, N]`.
    pub fn encode<'t>(&self, bind: &Binder<'_, 't>, queries: Var<'t>, views: &[SensorView<'t>]) -> Result<Var<'t>> {
        if views.is_empty() {
            return Err(Error::contract(format!("{:?} encoder needs at least one view", self.modality)));
        }
        let sources = self.sources(views)?;
        let grid = (self.refs.spec.h, self.refs.spec.w);
        let mut x = queries;
        for layer in &self.layers {
            x = layer.forward(bind, x, grid, &sources, self.config.normalize_hits)?;
        }
        Ok(x)
    }
}

/// Camera BEV features from `V ≥ 1` views.
pub fn encode_camera_bev<'t>(
    bind: &Binder<'_, 't>,
    encoder: &BevEncoder,
    queries: Var<'t>,
    views: &[SensorView<'t>],
) -> Result<Var<'t>> {
    encoder.encode(bind, queries, views)
}

/// LiDAR BEV features from one grid-shaped feature map `[H_L, W_L, C]`.
pub fn encode_lidar_bev<'t>(
    bind: &Binder<'_, 't>,
    encoder: &BevEncoder,
    queries: Var<'t>,
    features: Var<'t>,
) -> Result<Var<'t>> {
    let view = SensorView {
        features,
        projection: Projection::Grid,
    };
    encoder.encode(bind, queries, &[view])
}
