use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detection::GroundTruthBox;
use crate::error::{Error, Result};
use crate::geometry::BevGridSpec;

const ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeRange {
    pub w: (f64, f64),
    pub l: (f64, f64),
}

/// Box population of generated scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    /// Inclusive range of boxes per scene.
    pub n_boxes: (usize, usize),
    /// Relative frequency of each object class.
    pub class_mix: Vec<f64>,
    /// Footprint size per class.
    pub class_sizes: Vec<SizeRange>,
    /// Box height, the same for every class.
    pub height: (f64, f64),
    pub appearance: (f64, f64),
    pub min_center_dist: f64,
    /// Reject footprints whose bounding circles intersect.
    pub no_overlap: bool,
    /// Keep centers at least this far from the sensor origin.
    pub min_range: f64,
    /// Keep centers this far inside the extent.
    pub margin: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            n_boxes: (2, 8),
            class_mix: vec![0.4, 0.3, 0.3],
            class_sizes: vec![
                SizeRange { w: (1.6, 2.0), l: (3.8, 4.8) },
                SizeRange { w: (2.4, 2.8), l: (6.0, 8.0) },
                SizeRange { w: (0.6, 1.0), l: (0.8, 1.6) },
            ],
            height: (1.2, 2.4),
            appearance: (0.5, 1.0),
            min_center_dist: 1.0,
            no_overlap: true,
            min_range: 2.5,
            margin: 1.0,
        }
    }
}

impl SceneParams {
    pub fn classes(&self) -> usize {
        self.class_mix.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_boxes.0 > self.n_boxes.1 {
            errs.push(format!("scene.n_boxes range {:?} is empty", self.n_boxes));
        }
        if self.class_mix.is_empty() || self.class_mix.iter().any(|p| !(*p >= 0.0)) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            errs.push("scene.class_mix must be non-negative with a positive sum".to_string());
        }
        if self.class_sizes.len() != self.class_mix.len() {
            errs.push(format!(
                "scene.class_sizes has {} entries for {} classes",
                self.class_sizes.len(),
                self.class_mix.len()
            ));
        }
        let bad = |r: (f64, f64)| !(r.0 > 0.0 && r.1 >= r.0);
        if self.class_sizes.iter().any(|s| bad(s.w) || bad(s.l)) || bad(self.height) {
            errs.push("scene sizes must be positive ranges".to_string());
        }
        if !(0.0..=1.0).contains(&self.appearance.0) || !(self.appearance.0..=1.0).contains(&self.appearance.1) {
            errs.push(format!("scene.appearance {:?} must lie in [0, 1]", self.appearance));
        }
        if !(self.min_center_dist >= 1.0) {
            errs.push("scene.min_center_dist must be at least 1 m".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub gt: GroundTruthBox,
    pub height: f64,
    pub appearance: f64,
}

impl SceneBox {
    /// Footprint corners in world (x, y), counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.gt.yaw.sin_cos();
        let (hl, hw) = (self.gt.size[1] / 2.0, self.gt.size[0] / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| {
            [
                self.gt.center[0] + a * c - b * s,
                self.gt.center[1] + a * s + b * c,
            ]
        })
    }

    /// Whether world `(x, y)` lies inside the footprint. Length runs along yaw.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.gt.yaw.sin_cos();
        let (dx, dy) = (x - self.gt.center[0], y - self.gt.center[1]);
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= self.gt.size[1] / 2.0 && across.abs() <= self.gt.size[0] / 2.0
    }

    pub fn range(&self) -> f64 {
        self.gt.center[0].hypot(self.gt.center[1])
    }

    fn radius(&self) -> f64 {
        0.5 * self.gt.size[0].hypot(self.gt.size[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub boxes: Vec<SceneBox>,
}

impl Scene {
    pub fn ground_truth(&self) -> Vec<GroundTruthBox> {
        self.boxes.iter().map(|b| b.gt).collect()
    }
}

fn pick_class(mix: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = mix.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, p) in mix.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    mix.len() - 1
}

fn uniform(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.gen_range(r.0..r.1)
    } else {
        r.0
    }
}

/// Samples one scene. Each box is retried up to 1000 times; boxes that cannot
/// be placed are dropped, and a scene that needs boxes but cannot place any
/// is a generation error.
pub fn sample_scene(rng: &mut impl Rng, params: &SceneParams, spec: &BevGridSpec, scene_id: u64) -> Result<Scene> {
    params.validate()?;
    let n = rng.gen_range(params.n_boxes.0..=params.n_boxes.1);
    let (x0, x1, y0, y1) = spec.extent;
    let m = params.margin;
    if x1 - x0 <= 2.0 * m || y1 - y0 <= 2.0 * m {
        return Err(Error::Generation(format!("extent {:?} is smaller than the margin", spec.extent)));
    }
    let mut boxes: Vec<SceneBox> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let class_id = pick_class(&params.class_mix, rng);
            let size = params.class_sizes[class_id];
            let b = SceneBox {
                gt: GroundTruthBox {
                    center: [rng.gen_range(x0 + m..x1 - m), rng.gen_range(y0 + m..y1 - m)],
                    size: [uniform(rng, size.w), uniform(rng, size.l)],
                    yaw: std::f64::consts::PI - rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                    class_id,
                },
                height: uniform(rng, params.height),
                appearance: uniform(rng, params.appearance),
            };
            let clear = b.range() >= params.min_range
                && boxes.iter().all(|o| {
                    let d = (b.gt.center[0] - o.gt.center[0]).hypot(b.gt.center[1] - o.gt.center[1]);
                    d >= params.min_center_dist && (!params.no_overlap || d >= b.radius() + o.radius())
                });
            if clear {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            break;
        }
    }
    if boxes.is_empty() && n > 0 {
        return Err(Error::Generation(format!(
            "could not place any box in extent {:?} after {ATTEMPTS} attempts",
            spec.extent
        )));
    }
    Ok(Scene { scene_id, boxes })
}
