use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::error::{Error, Result};
use crate::geometry::{BevGridSpec, CameraModel, MIN_DEPTH};
use crate::tensor::Tensor;

/// Ring of cameras on the ego vehicle, evenly spread in yaw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub views: usize,
    pub fx: f64,
    pub fy: f64,
    pub image_h: usize,
    pub image_w: usize,
    pub mount_height: f64,
    pub pitch_down_deg: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            views: 4,
            fx: 24.0,
            fy: 24.0,
            image_h: 48,
            image_w: 64,
            mount_height: 1.6,
            pitch_down_deg: 5.0,
        }
    }
}

impl RigConfig {
    /// Camera `i` looks along yaw `2πi / V`.
    pub fn cameras(&self) -> Vec<CameraModel> {
        (0..self.views)
            .map(|i| {
                CameraModel::looking(
                    [0.0, 0.0, self.mount_height],
                    2.0 * std::f64::consts::PI * i as f64 / self.views as f64,
                    self.pitch_down_deg.to_radians(),
                    self.fx,
                    self.fy,
                    (self.image_w as f64 - 1.0) / 2.0,
                    (self.image_h as f64 - 1.0) / 2.0,
                    self.image_h,
                    self.image_w,
                )
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.views == 0 {
            errs.push("rig.views must be >= 1".to_string());
        }
        if self.image_h < 2 || self.image_w < 2 || self.image_h % 2 != 0 || self.image_w % 2 != 0 {
            errs.push(format!("rig image {}x{} must be even and at least 2x2", self.image_h, self.image_w));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            errs.push("rig focal lengths must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Noise and LiDAR grid settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorParams {
    pub sigma_cam: f64,
    pub sigma_lidar: f64,
    pub lidar_h: usize,
    pub lidar_w: usize,
    /// Dropout probability `min(max_drop, r / drop_range)` at range `r`.
    pub max_drop: f64,
    pub drop_range: f64,
    /// Never drop the cell that holds a box center.
    pub keep_center_cell: bool,
}

impl Default for SensorParams {
    fn default() -> Self {
        SensorParams {
            sigma_cam: 0.05,
            sigma_lidar: 0.05,
            lidar_h: 32,
            lidar_w: 32,
            max_drop: 0.8,
            drop_range: 40.0,
            keep_center_cell: true,
        }
    }
}

impl SensorParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.sigma_cam >= 0.0 && self.sigma_lidar >= 0.0) {
            errs.push("sensor noise must be non-negative".to_string());
        }
        if self.lidar_h == 0 || self.lidar_w == 0 {
            errs.push("lidar grid must be non-empty".to_string());
        }
        if !(0.0..=1.0).contains(&self.max_drop) || !(self.drop_range > 0.0) {
            errs.push("lidar dropout parameters out of range".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

fn add_noise(t: &mut Tensor, sigma: f64, rng: &mut impl Rng) {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("finite sigma");
        t.data_mut().iter_mut().for_each(|v| *v += n.sample(rng));
    }
}

/// Per-view RGB images `[h, w, 3]`. Each visible box becomes a flat-topped
/// blob over the bounding rectangle of its projected corners, colored by
/// class (one channel per class) scaled by appearance; nearer boxes are
/// painted last.
pub fn render_cameras(scene: &Scene, cams: &[CameraModel], sigma: f64, rng: &mut impl Rng) -> Vec<Tensor> {
    cams.iter()
        .map(|cam| {
            let (h, w) = (cam.image_h, cam.image_w);
            let mut img = Tensor::zeros(&[h, w, 3]);
            let mut order: Vec<(f64, usize)> = scene
                .boxes
                .iter()
                .enumerate()
                .map(|(i, b)| (cam.to_camera([b.gt.center[0], b.gt.center[1], b.height / 2.0, 1.0])[2], i))
                .collect();
            order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (_, i) in order {
                let b = &scene.boxes[i];
                let mut rect = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
                let mut any = false;
                for [x, y] in b.footprint() {
                    for z in [0.0, b.height] {
                        let ([u, v], d) = cam.project_point([x, y, z, 1.0]);
                        if d > MIN_DEPTH {
                            any = true;
                            rect = (rect.0.min(u), rect.1.max(u), rect.2.min(v), rect.3.max(v));
                        }
                    }
                }
                if !any {
                    continue;
                }
                let (uc, vc) = ((rect.0 + rect.1) / 2.0, (rect.2 + rect.3) / 2.0);
                let (su, sv) = (((rect.1 - rect.0) / 2.0).max(0.5), ((rect.3 - rect.2) / 2.0).max(0.5));
                let c0 = ((uc - 1.5 * su).floor().max(0.0)) as usize;
                let r0 = ((vc - 1.5 * sv).floor().max(0.0)) as usize;
                let c1 = (uc + 1.5 * su).ceil().min(w as f64 - 1.0);
                let r1 = (vc + 1.5 * sv).ceil().min(h as f64 - 1.0);
                if c1 < 0.0 || r1 < 0.0 {
                    continue;
                }
                let mut color = [0.0; 3];
                color[b.gt.class_id % 3] = b.appearance;
                for r in r0..=r1 as usize {
                    for c in c0..=c1 as usize {
                        let q = ((c as f64 - uc) / su).powi(2) + ((r as f64 - vc) / sv).powi(2);
                        let alpha = (-q * q).exp();
                        for (k, col) in color.iter().enumerate() {
                            let v = img.get(&[r, c, k]);
                            img.set(&[r, c, k], v * (1.0 - alpha) + alpha * col);
                        }
                    }
                }
            }
            add_noise(&mut img, sigma, rng);
            img
        })
        .collect()
}

/// LiDAR BEV grid `[H_L, W_L, 2]` over the extent of `spec`. A cell is
/// occupied when its center lies inside a box (or it holds the box center),
/// subject to range-dependent dropout; the second channel carries that box's
/// height. Class is not encoded.
pub fn render_lidar(scene: &Scene, spec: &BevGridSpec, params: &SensorParams, rng: &mut impl Rng) -> Tensor {
    let (hl, wl) = (params.lidar_h, params.lidar_w);
    let (x0, x1, y0, y1) = spec.extent;
    let (dx, dy) = ((x1 - x0) / wl as f64, (y1 - y0) / hl as f64);
    let cell_of = |x: f64, y: f64| {
        let c = (((x - x0) / dx).floor() as i64).clamp(0, wl as i64 - 1) as usize;
        let r = (((y - y0) / dy).floor() as i64).clamp(0, hl as i64 - 1) as usize;
        (r, c)
    };
    let centers: Vec<(usize, usize)> = scene.boxes.iter().map(|b| cell_of(b.gt.center[0], b.gt.center[1])).collect();
    let mut grid = Tensor::zeros(&[hl, wl, 2]);
    for r in 0..hl {
        for c in 0..wl {
            let (xc, yc) = (x0 + (c as f64 + 0.5) * dx, y0 + (r as f64 + 0.5) * dy);
            let hit = scene
                .boxes
                .iter()
                .enumerate()
                .find(|(bi, b)| b.contains(xc, yc) || centers[*bi] == (r, c));
            let Some((bi, b)) = hit else { continue };
            let p_drop = params.max_drop.min(xc.hypot(yc) / params.drop_range);
            let exempt = params.keep_center_cell && centers[bi] == (r, c);
            if exempt || rng.gen::<f64>() >= p_drop {
                grid.set(&[r, c, 0], 1.0);
                grid.set(&[r, c, 1], b.height);
            }
        }
    }
    add_noise(&mut grid, params.sigma_lidar, rng);
    grid
}
