//! The full detector: per-modality backbones and BEV encoders, fusion, and
//! the set-prediction decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bev::{BevEncoder, BevEncoderConfig, BevQueries, Modality, Projection, QueryMode, SensorView};
use crate::detection::{decode, set_loss, Decoder, DecoderConfig, DecoderOutput, LossConfig, ScoredBox, SetLoss};
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionKind, ModalityMask};
use crate::geometry::{BevGridSpec, CameraModel, ReferenceGrid};
use crate::synth::{Backbone, Manifest, RenderedSample};
use crate::tensor::{Binder, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// BEV feature width `N` seen by the decoder.
    pub channels: usize,
    /// Attention heads `M` in the encoders.
    pub heads: usize,
    /// Sampling points `K` per head.
    pub points: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub n_obj: usize,
    pub ffn_hidden: usize,
    /// Width of the backbone output maps.
    pub feature_channels: usize,
    pub cam_hidden: usize,
    pub lidar_hidden: usize,
    pub self_spread: f64,
    pub cross_spread: f64,
    pub normalize_hits: bool,
    pub query_self_attn: bool,
    pub fusion: FusionKind,
    pub queries: QueryMode,
    pub loss: LossConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 32,
            heads: 2,
            points: 4,
            encoder_layers: 3,
            decoder_layers: 2,
            n_obj: 12,
            ffn_hidden: 64,
            feature_channels: 16,
            cam_hidden: 8,
            lidar_hidden: 16,
            self_spread: 1.0,
            cross_spread: 1.0,
            normalize_hits: true,
            query_self_attn: true,
            fusion: FusionKind::Cnw,
            queries: QueryMode::Shared,
            loss: LossConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Width of each modality's BEV map: concatenation splits `N` in half.
    pub fn encoder_channels(&self) -> usize {
        match self.fusion {
            FusionKind::Concat => self.channels / 2,
            _ => self.channels,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let mut errs = Vec::new();
        let enc = self.encoder_channels();
        if self.channels == 0 || self.feature_channels == 0 || self.cam_hidden == 0 || self.lidar_hidden == 0 {
            errs.push("model widths must be positive".to_string());
        }
        if self.fusion == FusionKind::Concat && self.channels % 2 != 0 {
            errs.push(format!("model.channels {} must be even for concat fusion", self.channels));
        }
        if self.heads == 0 || enc % self.heads.max(1) != 0 {
            errs.push(format!("encoder width {enc} must be divisible by model.heads {}", self.heads));
        }
        if self.points == 0 || self.encoder_layers == 0 {
            errs.push("model.points and model.encoder_layers must be positive".to_string());
        }
        if !(self.loss.lambda_cls >= 0.0 && self.loss.lambda_box >= 0.0 && self.loss.center_unit > 0.0) {
            errs.push("loss weights must be non-negative and center_unit positive".to_string());
        }
        if let Err(Error::Config(e)) = self.decoder(classes).validate() {
            errs.extend(e.into_iter().map(|s| format!("model: {s}")));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn decoder(&self, classes: usize) -> DecoderConfig {
        DecoderConfig {
            channels: self.channels,
            layers: self.decoder_layers,
            n_obj: self.n_obj,
            classes: classes + 1,
            ffn_hidden: self.ffn_hidden,
            query_self_attn: self.query_self_attn,
        }
    }

    fn encoder(&self) -> BevEncoderConfig {
        BevEncoderConfig {
            channels: self.encoder_channels(),
            source_channels: self.feature_channels,
            heads: self.heads,
            points: self.points,
            layers: self.encoder_layers,
            ffn_hidden: self.ffn_hidden,
            self_spread: self.self_spread,
            cross_spread: self.cross_spread,
            normalize_hits: self.normalize_hits,
        }
    }
}

/// Sensor layout a model is built for.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorLayout {
    /// Full-resolution image cameras.
    pub cameras: Vec<CameraModel>,
    pub lidar_h: usize,
    pub lidar_w: usize,
    /// Extent covered by the LiDAR grid.
    pub extent: (f64, f64, f64, f64),
}

impl SensorLayout {
    pub fn from_manifest(m: &Manifest) -> Self {
        SensorLayout {
            cameras: m.cameras.clone(),
            lidar_h: m.synth.sensors.lidar_h,
            lidar_w: m.synth.sensors.lidar_w,
            extent: m.grid.extent,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub grid: BevGridSpec,
    pub layout: SensorLayout,
    /// Object classes, background excluded.
    pub classes: usize,
    pub cam_backbone: Backbone,
    pub lidar_backbone: Backbone,
    pub cam_encoder: BevEncoder,
    pub lidar_encoder: BevEncoder,
    pub queries: BevQueries,
    pub fusion: Fusion,
    pub decoder: Decoder,
    feature_cams: Vec<CameraModel>,
}

impl Model {
    pub fn new(config: ModelConfig, grid: BevGridSpec, layout: SensorLayout, classes: usize) -> Result<Self> {
        config.validate(classes)?;
        grid.validate()?;
        if grid.extent != layout.extent {
            return Err(Error::Config(vec![format!(
                "model grid extent {:?} does not match sensor extent {:?}",
                grid.extent, layout.extent
            )]));
        }
        if layout.cameras.is_empty() {
            return Err(Error::Config(vec!["model needs at least one camera".into()]));
        }
        for cam in &layout.cameras {
            cam.validate()?;
            if cam.image_h % 2 != 0 || cam.image_w % 2 != 0 {
                return Err(Error::Config(vec![format!("image {}x{} must have even sides", cam.image_h, cam.image_w)]));
            }
        }
        let refs = ReferenceGrid::build(grid)?;
        let enc = config.encoder();
        let f = config.feature_channels;
        Ok(Model {
            cam_backbone: Backbone::camera(3, config.cam_hidden, f),
            lidar_backbone: Backbone::lidar(2, config.lidar_hidden, f),
            cam_encoder: BevEncoder::new("encoder.cam", Modality::Camera, enc, refs.clone()),
            lidar_encoder: BevEncoder::new("encoder.lidar", Modality::Lidar, enc, refs),
            queries: BevQueries { mode: config.queries, cells: grid.h * grid.w, channels: enc.channels },
            fusion: Fusion { kind: config.fusion, channels: enc.channels },
            decoder: Decoder::new(config.decoder(classes), grid),
            feature_cams: layout.cameras.iter().map(|c| c.downsampled(2)).collect(),
            config,
            grid,
            layout,
            classes,
        })
    }

    /// Fresh parameters, deterministic in `seed`.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.cam_backbone.init(&mut store, &mut rng)?;
        self.lidar_backbone.init(&mut store, &mut rng)?;
        self.queries.init(&mut store, &mut rng)?;
        self.cam_encoder.init(&mut store, &mut rng)?;
        self.lidar_encoder.init(&mut store, &mut rng)?;
        self.fusion.init(&mut store)?;
        self.decoder.init(&mut store, &mut rng)?;
        Ok(store)
    }

    /// Checks that a dataset was rendered for this model's sensors.
    pub fn check_dataset(&self, manifest: &Manifest) -> Result<()> {
        let mut errs = Vec::new();
        if manifest.grid.extent != self.grid.extent {
            errs.push(format!(
                "dataset extent {:?} does not match model extent {:?}",
                manifest.grid.extent, self.grid.extent
            ));
        }
        if manifest.cameras != self.layout.cameras {
            errs.push("dataset cameras differ from the model's camera rig".to_string());
        }
        let s = &manifest.synth.sensors;
        if (s.lidar_h, s.lidar_w) != (self.layout.lidar_h, self.layout.lidar_w) {
            errs.push(format!(
                "dataset LiDAR grid {}x{} does not match model {}x{}",
                s.lidar_h, s.lidar_w, self.layout.lidar_h, self.layout.lidar_w
            ));
        }
        if manifest.synth.scene.classes() != self.classes {
            errs.push(format!(
                "dataset has {} classes, model {}",
                manifest.synth.scene.classes(),
                self.classes
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Camera BEV map from `V` images `[h, w, 3]`.
    pub fn camera_bev<'t>(&self, bind: &Binder<'_, 't>, images: &[Var<'t>]) -> Result<Var<'t>> {
        if images.len() != self.feature_cams.len() {
            return Err(Error::contract(format!(
                "{} images for a {}-camera rig",
                images.len(),
                self.feature_cams.len()
            )));
        }
        let views = images
            .iter()
            .zip(&self.feature_cams)
            .map(|(&img, cam)| {
                Ok(SensorView {
                    features: self.cam_backbone.forward(bind, img)?,
                    projection: Projection::Camera(cam.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let q = self.queries.get(bind, Modality::Camera)?;
        self.cam_encoder.encode(bind, q, &views)
    }

    /// LiDAR BEV map from the grid `[H_L, W_L, 2]`.
    pub fn lidar_bev<'t>(&self, bind: &Binder<'_, 't>, grid: Var<'t>) -> Result<Var<'t>> {
        let view = SensorView {
            features: self.lidar_backbone.forward(bind, grid)?,
            projection: Projection::Grid,
        };
        let q = self.queries.get(bind, Modality::Lidar)?;
        self.lidar_encoder.encode(bind, q, &[view])
    }

    /// Per-modality BEV maps for the modalities in `mask`.
    pub fn bev_maps<'t>(
        &self,
        bind: &Binder<'_, 't>,
        sample: &RenderedSample,
        mask: ModalityMask,
    ) -> Result<(Option<Var<'t>>, Option<Var<'t>>)> {
        mask.check()?;
        let tape = bind.tape();
        let cam = if mask.use_cam {
            let imgs: Vec<Var<'t>> = sample.images.iter().map(|i| tape.constant(i.clone())).collect();
            Some(self.camera_bev(bind, &imgs)?)
        } else {
            None
        };
        let lidar = if mask.use_lidar {
            Some(self.lidar_bev(bind, tape.constant(sample.lidar.clone()))?)
        } else {
            None
        };
        Ok((cam, lidar))
    }

    pub fn forward<'t>(&self, bind: &Binder<'_, 't>, sample: &RenderedSample, mask: ModalityMask) -> Result<DecoderOutput<'t>> {
        let (cam, lidar) = self.bev_maps(bind, sample, mask)?;
        let fused = self.fusion.forward(bind, cam, lidar)?;
        self.decoder.forward(bind, fused)
    }

    pub fn loss<'t>(&self, bind: &Binder<'_, 't>, sample: &RenderedSample, mask: ModalityMask) -> Result<SetLoss<'t>> {
        let out = self.forward(bind, sample, mask)?;
        set_loss(&out, &sample.scene.ground_truth(), &self.config.loss)
    }

    /// Scored boxes for one scene under `mask`, one per object query.
    pub fn predict(&self, store: &ParamStore, sample: &RenderedSample, mask: ModalityMask) -> Result<Vec<ScoredBox>> {
        let tape = Tape::new();
        let bind = Binder::frozen(store, &tape);
        let out = self.forward(&bind, sample, mask)?;
        Ok(decode(&out).iter().map(|b| b.scored()).collect())
    }
}
