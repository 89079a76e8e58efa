//! BEV reference grid and its projection into camera and LiDAR feature
//! coordinates.
//!
//! World frame: x forward, y left, z up (meters). Camera frame: x right,
//! y down, z along the optical axis. Image and feature coordinates place pixel
//! centers at integers; `u` indexes columns and `v` rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum camera depth for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BevGridSpec {
    pub h: usize,
    pub w: usize,
    /// Reference points per pillar.
    pub d: usize,
    /// `(x_min, x_max, y_min, y_max)`.
    pub extent: (f64, f64, f64, f64),
    pub z_range: (f64, f64),
}

impl Default for BevGridSpec {
    fn default() -> Self {
        BevGridSpec {
            h: 32,
            w: 32,
            d: 4,
            extent: (-16.0, 16.0, -16.0, 16.0),
            z_range: (-1.0, 3.0),
        }
    }
}

impl BevGridSpec {
    /// A full-resolution 200×200 grid over ±51.2 m.
    pub fn large_preset() -> Self {
        BevGridSpec {
            h: 200,
            w: 200,
            d: 4,
            extent: (-51.2, 51.2, -51.2, 51.2),
            z_range: (-5.0, 3.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.h == 0 || self.w == 0 || self.d == 0 {
            errs.push(format!("grid dims must be positive, got h={} w={} d={}", self.h, self.w, self.d));
        }
        let (x0, x1, y0, y1) = self.extent;
        if !(x1 > x0) || !(y1 > y0) {
            errs.push(format!("degenerate extent {:?}", self.extent));
        }
        if !(self.z_range.1 > self.z_range.0) {
            errs.push(format!("degenerate z_range {:?}", self.z_range));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn cell_size(&self) -> (f64, f64) {
        let (x0, x1, y0, y1) = self.extent;
        ((x1 - x0) / self.w as f64, (y1 - y0) / self.h as f64)
    }

    /// World (x, y) of the center of BEV cell `(h, w)`.
    pub fn cell_center(&self, h: usize, w: usize) -> (f64, f64) {
        let (dx, dy) = self.cell_size();
        (
            self.extent.0 + (w as f64 + 0.5) * dx,
            self.extent.2 + (h as f64 + 0.5) * dy,
        )
    }

    pub fn level_z(&self, z: usize) -> f64 {
        let dz = (self.z_range.1 - self.z_range.0) / self.d as f64;
        self.z_range.0 + (z as f64 + 0.5) * dz
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, x1, y0, y1) = self.extent;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    /// Maps world (x, y) to continuous (row, col) on a `rows × cols` grid that
    /// covers this extent, cell centers at integers.
    pub fn world_to_grid(&self, x: f64, y: f64, rows: usize, cols: usize) -> (f64, f64) {
        let (x0, x1, y0, y1) = self.extent;
        (
            (y - y0) / (y1 - y0) * rows as f64 - 0.5,
            (x - x0) / (x1 - x0) * cols as f64 - 0.5,
        )
    }
}

/// Homogeneous reference points, `D × H × W`, indexed `(z, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceGrid {
    pub spec: BevGridSpec,
    pub points: Vec<[f64; 4]>,
}

impl ReferenceGrid {
    pub fn build(spec: BevGridSpec) -> Result<Self> {
        spec.validate()?;
        let mut points = Vec::with_capacity(spec.d * spec.h * spec.w);
        for z in 0..spec.d {
            let zc = spec.level_z(z);
            for h in 0..spec.h {
                for w in 0..spec.w {
                    let (x, y) = spec.cell_center(h, w);
                    points.push([x, y, zc, 1.0]);
                }
            }
        }
        Ok(ReferenceGrid { spec, points })
    }

    pub fn index(&self, z: usize, h: usize, w: usize) -> usize {
        (z * self.spec.h + h) * self.spec.w + w
    }

    pub fn point(&self, z: usize, h: usize, w: usize) -> [f64; 4] {
        self.points[self.index(z, h, w)]
    }

    /// Points of level `z`, in `(h, w)` row-major order.
    pub fn level(&self, z: usize) -> &[[f64; 4]] {
        let n = self.spec.h * self.spec.w;
        &self.points[z * n..(z + 1) * n]
    }
}

/// Pinhole camera with zero skew.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: [[f64; 3]; 3],
    pub world_to_cam: [[f64; 4]; 4],
    pub image_h: usize,
    pub image_w: usize,
}

/// Per-view projection of a reference grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraProjection {
    /// `(u, v)` per reference point; `(0, 0)` where invisible.
    pub uv: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl CameraModel {
    /// Camera at `position`, heading `yaw` (radians, counter-clockwise from +x)
    /// and pitched down by `pitch_down` radians.
    #[allow(clippy::too_many_arguments)]
    pub fn looking(
        position: [f64; 3],
        yaw: f64,
        pitch_down: f64,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        image_h: usize,
        image_w: usize,
    ) -> Self {
        let (sy, cyaw) = yaw.sin_cos();
        let (sp, cp) = pitch_down.sin_cos();
        let fwd = [cyaw * cp, sy * cp, -sp];
        let right = [sy, -cyaw, 0.0];
        let down = cross(fwd, right);
        let rot = [right, down, fwd];
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            m[r][..3].copy_from_slice(&rot[r]);
            m[r][3] = -(rot[r][0] * position[0] + rot[r][1] * position[1] + rot[r][2] * position[2]);
        }
        m[3][3] = 1.0;
        CameraModel {
            intrinsics: [[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]],
            world_to_cam: m,
            image_h,
            image_w,
        }
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[0][0]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[1][1]
    }

    pub fn cx(&self) -> f64 {
        self.intrinsics[0][2]
    }

    pub fn cy(&self) -> f64 {
        self.intrinsics[1][2]
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.fx() > 0.0 && self.fy() > 0.0) {
            errs.push("camera focal lengths must be positive".to_string());
        }
        if self.intrinsics[0][1] != 0.0 {
            errs.push("camera skew must be zero".to_string());
        }
        if self.image_h == 0 || self.image_w == 0 {
            errs.push("camera image size must be positive".to_string());
        }
        let r = |i: usize, j: usize| self.world_to_cam[i][j];
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r(i, k) * r(j, k)).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot - target).abs() > 1e-9 {
                    errs.push("camera rotation is not orthonormal".to_string());
                }
            }
        }
        let det = r(0, 0) * (r(1, 1) * r(2, 2) - r(1, 2) * r(2, 1))
            - r(0, 1) * (r(1, 0) * r(2, 2) - r(1, 2) * r(2, 0))
            + r(0, 2) * (r(1, 0) * r(2, 1) - r(1, 1) * r(2, 0));
        if (det - 1.0).abs() > 1e-9 {
            errs.push(format!("camera rotation determinant {det} != 1"));
        }
        errs.dedup();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn to_camera(&self, p: [f64; 4]) -> [f64; 3] {
        let m = &self.world_to_cam;
        let row = |r: usize| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3] * p[3];
        [row(0), row(1), row(2)]
    }

    /// Pixel `(u, v)` and camera depth of a homogeneous world point.
    pub fn project_point(&self, p: [f64; 4]) -> ([f64; 2], f64) {
        let [x, y, z] = self.to_camera(p);
        let u = self.fx() * x / z + self.cx();
        let v = self.fy() * y / z + self.cy();
        ([u, v], z)
    }

    pub fn in_bounds(&self, uv: [f64; 2]) -> bool {
        uv[0] >= 0.0 && uv[0] <= (self.image_w - 1) as f64 && uv[1] >= 0.0 && uv[1] <= (self.image_h - 1) as f64
    }

    /// World point at camera depth `depth` along the ray through pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let pc = [
            (u - self.cx()) / self.fx() * depth,
            (v - self.cy()) / self.fy() * depth,
            depth,
        ];
        let m = &self.world_to_cam;
        let d = [pc[0] - m[0][3], pc[1] - m[1][3], pc[2] - m[2][3]];
        [0, 1, 2].map(|c| m[0][c] * d[0] + m[1][c] * d[1] + m[2][c] * d[2])
    }

    /// Camera centre in world coordinates.
    pub fn position(&self) -> [f64; 3] {
        let m = &self.world_to_cam;
        [0, 1, 2].map(|c| -(m[0][c] * m[0][3] + m[1][c] * m[1][3] + m[2][c] * m[2][3]))
    }

    /// The same camera observing a feature map downsampled by `factor`
    /// (average pooling: feature cell `j` covers pixels `factor·j .. factor·j + factor - 1`).
    pub fn downsampled(&self, factor: usize) -> Self {
        let f = factor as f64;
        let off = (f - 1.0) / 2.0;
        let mut cam = self.clone();
        cam.intrinsics[0][0] /= f;
        cam.intrinsics[1][1] /= f;
        cam.intrinsics[0][2] = (self.cx() - off) / f;
        cam.intrinsics[1][2] = (self.cy() - off) / f;
        cam.image_h = self.image_h / factor;
        cam.image_w = self.image_w / factor;
        cam
    }

    /// Projects every reference point; invisible entries get `uv = (0, 0)`.
    pub fn project_grid(&self, refs: &ReferenceGrid) -> CameraProjection {
        let mut uv = Vec::with_capacity(refs.points.len());
        let mut visible = Vec::with_capacity(refs.points.len());
        for &p in &refs.points {
            let (q, depth) = self.project_point(p);
            let vis = depth > MIN_DEPTH && self.in_bounds(q);
            uv.push(if vis { q } else { [0.0, 0.0] });
            visible.push(vis);
        }
        CameraProjection { uv, visible }
    }
}

/// Continuous (row, col) LiDAR feature coordinates for each reference point,
/// `D × H × W`. The LiDAR grid covers the same extent as the BEV grid; when it
/// has the same resolution every cell maps onto its own index.
pub fn project_to_lidar(refs: &ReferenceGrid, lidar_h: usize, lidar_w: usize) -> Vec<[f64; 2]> {
    let s = &refs.spec;
    let sr = lidar_h as f64 / s.h as f64;
    let sc = lidar_w as f64 / s.w as f64;
    let mut out = Vec::with_capacity(refs.points.len());
    for _z in 0..s.d {
        for h in 0..s.h {
            for w in 0..s.w {
                out.push([(h as f64 + 0.5) * sr - 0.5, (w as f64 + 0.5) * sc - 0.5]);
            }
        }
    }
    out
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
