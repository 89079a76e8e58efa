//! Fusion of per-modality BEV maps and modality-dropout sampling.
//!
//! Channel-normalized weights (CNW) keep one learnable vector `A_m` per
//! modality and mix the maps channel by channel:
//!
//! ```text
//! Ā_cam(i), Ā_lidar(i) = softmax(A_cam(i), A_lidar(i))
//! F = F_cam ⊙ Ā_cam + F_lidar ⊙ Ā_lidar
//! ```
//!
//! With a single modality present its weights are all ones, so the map passes
//! through unchanged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Binder, ParamStore, Tensor, Var};

pub const CNW_CAM: &str = "fusion.cnw.cam";
pub const CNW_LIDAR: &str = "fusion.cnw.lidar";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Concat,
    Avg,
    #[default]
    Cnw,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::Concat, FusionKind::Avg, FusionKind::Cnw];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Concat => "concat",
            FusionKind::Avg => "avg",
            FusionKind::Cnw => "cnw",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "concat" | "cat" => Ok(FusionKind::Concat),
            "avg" => Ok(FusionKind::Avg),
            "cnw" => Ok(FusionKind::Cnw),
            _ => Err(format!("unknown fusion '{s}' (expected concat, avg or cnw)")),
        }
    }
}

/// Which modalities are fed to the fusion step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalityMask {
    pub use_cam: bool,
    pub use_lidar: bool,
}

impl ModalityMask {
    pub const BOTH: ModalityMask = ModalityMask { use_cam: true, use_lidar: true };
    pub const LIDAR_ONLY: ModalityMask = ModalityMask { use_cam: false, use_lidar: true };
    pub const CAMERA_ONLY: ModalityMask = ModalityMask { use_cam: true, use_lidar: false };

    /// `"lc"`, `"l"` or `"c"` (`"none"` for the invalid empty mask).
    pub fn label(self) -> &'static str {
        match (self.use_cam, self.use_lidar) {
            (true, true) => "lc",
            (false, true) => "l",
            (true, false) => "c",
            (false, false) => "none",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "lc" => Some(Self::BOTH),
            "l" => Some(Self::LIDAR_ONLY),
            "c" => Some(Self::CAMERA_ONLY),
            _ => None,
        }
    }

    pub fn check(self) -> Result<()> {
        if self.use_cam || self.use_lidar {
            Ok(())
        } else {
            Err(Error::contract("modality mask drops every modality"))
        }
    }
}

/// Modality-dropout probabilities. Cameras are kept alone with `1 - p_l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdConfig {
    pub p_md: f64,
    pub p_l: f64,
}

impl Default for MdConfig {
    fn default() -> Self {
        MdConfig { p_md: 0.5, p_l: 0.5 }
    }
}

impl MdConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, p) in [("md.p_md", self.p_md), ("md.p_l", self.p_l)] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{name} = {p} is not a probability"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Keeps both modalities with probability `1 - p_md`; otherwise keeps only
/// LiDAR with probability `p_l` and only cameras otherwise.
pub fn sample_modality_mask(cfg: &MdConfig, rng: &mut impl Rng) -> ModalityMask {
    if rng.gen::<f64>() >= cfg.p_md {
        ModalityMask::BOTH
    } else if rng.gen::<f64>() < cfg.p_l {
        ModalityMask::LIDAR_ONLY
    } else {
        ModalityMask::CAMERA_ONLY
    }
}

/// Normalized CNW weights `(Ā_cam, Ā_lidar)`; an absent modality gets zeros and
/// a lone modality gets ones.
pub fn normalize_weights(a_cam: &[f64], a_lidar: &[f64], mask: ModalityMask) -> Result<(Vec<f64>, Vec<f64>)> {
    mask.check()?;
    if a_cam.len() != a_lidar.len() {
        return Err(Error::dim("normalize_weights", &[a_cam.len()], &[a_lidar.len()]));
    }
    let n = a_cam.len();
    Ok(match (mask.use_cam, mask.use_lidar) {
        (true, true) => a_cam
            .iter()
            .zip(a_lidar)
            .map(|(&c, &l)| {
                let m = c.max(l);
                let (ec, el) = ((c - m).exp(), (l - m).exp());
                (ec / (ec + el), el / (ec + el))
            })
            .unzip(),
        (true, false) => (vec![1.0; n], vec![0.0; n]),
        _ => (vec![0.0; n], vec![1.0; n]),
    })
}

fn missing() -> Error {
    Error::contract("fusion needs at least one modality")
}

/// `F_cam ⊙ Ā_cam + F_lidar ⊙ Ā_lidar`; a lone input is returned as is.
pub fn fuse_cnw<'t>(
    cam: Option<Var<'t>>,
    lidar: Option<Var<'t>>,
    a_cam: Var<'t>,
    a_lidar: Var<'t>,
) -> Result<Var<'t>> {
    match (cam, lidar) {
        (Some(c), Some(l)) => {
            let n = a_cam.shape()[0];
            let pair = Var::concat_last(&[a_cam.reshape(&[n, 1])?, a_lidar.reshape(&[n, 1])?])?.softmax_last()?;
            let wc = pair.slice_last(0, 1)?.reshape(&[n])?;
            let wl = pair.slice_last(1, 1)?.reshape(&[n])?;
            c.mul_channel(wc)?.add(l.mul_channel(wl)?)
        }
        (Some(x), None) | (None, Some(x)) => Ok(x),
        (None, None) => Err(missing()),
    }
}

/// Mean over the present maps.
pub fn fuse_avg<'t>(cam: Option<Var<'t>>, lidar: Option<Var<'t>>) -> Result<Var<'t>> {
    match (cam, lidar) {
        (Some(c), Some(l)) => Ok(c.add(l)?.scale(0.5)),
        (Some(x), None) | (None, Some(x)) => Ok(x),
        (None, None) => Err(missing()),
    }
}

/// `[cam ‖ lidar]` along channels with a missing block filled by zeros.
pub fn fuse_concat<'t>(cam: Option<Var<'t>>, lidar: Option<Var<'t>>) -> Result<Var<'t>> {
    let present = cam.or(lidar).ok_or_else(missing)?;
    let zeros = || present.tape().constant(Tensor::zeros(&present.shape()));
    Var::concat_last(&[cam.unwrap_or_else(zeros), lidar.unwrap_or_else(zeros)])
}

/// The fusion step of a model: its kind plus, for CNW, the weight vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fusion {
    pub kind: FusionKind,
    /// Width of each modality's BEV map.
    pub channels: usize,
}

impl Fusion {
    /// CNW weights start at zero, which is exact averaging.
    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        if self.kind == FusionKind::Cnw {
            store.insert(CNW_CAM, Tensor::zeros(&[self.channels]))?;
            store.insert(CNW_LIDAR, Tensor::zeros(&[self.channels]))?;
        }
        Ok(())
    }

    /// Width of the fused map.
    pub fn output_channels(&self) -> usize {
        match self.kind {
            FusionKind::Concat => 2 * self.channels,
            _ => self.channels,
        }
    }

    pub fn forward<'t>(&self, bind: &Binder<'_, 't>, cam: Option<Var<'t>>, lidar: Option<Var<'t>>) -> Result<Var<'t>> {
        match self.kind {
            FusionKind::Concat => fuse_concat(cam, lidar),
            FusionKind::Avg => fuse_avg(cam, lidar),
            FusionKind::Cnw => fuse_cnw(cam, lidar, bind.get(CNW_CAM)?, bind.get(CNW_LIDAR)?),
        }
    }

    /// Normalized weights for `mask` from a parameter store (CNW only).
    pub fn normalized(&self, store: &ParamStore, mask: ModalityMask) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        if self.kind != FusionKind::Cnw {
            return Ok(None);
        }
        let get = |n: &str| {
            store
                .get(n)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| Error::contract(format!("missing parameter {n}")))
        };
        normalize_weights(&get(CNW_CAM)?, &get(CNW_LIDAR)?, mask).map(Some)
    }
}
